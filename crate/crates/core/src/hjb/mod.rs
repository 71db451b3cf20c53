//! Finite-difference solvers for the worst-case price, its limit and its
//! first-order corrector, plus Greeks and worst-case controls.

mod control;
mod greeks;
mod solver;
mod surface;

pub use control::{
    bang_bang, default_gamma_tolerance, maximise_hamiltonian, mismatch_set, optimal_control_field,
    ControlField, ControlSchedule, MismatchSets,
};
pub use greeks::{greeks, GreekFields, PointGreeks};
pub use solver::{
    admissible_steps, aligned_with_steps, solve_bsb_1d, solve_corrector, solve_hjb_2d, with_admissible_steps, Equation,
    LimitSlice, SolveOptions,
};
pub use surface::{interpolate, nearest_node, PriceSurface, Retention, SurfaceKind, TerminalTreatment};
