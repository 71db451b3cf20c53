//! Worst-case option pricing under an α-hypergeometric uncertain-volatility
//! model.
//!
//! The seller's price `P^δ(t, x, v) = sup_{q∈Θ} E[h(X_T)]` solves a fully
//! nonlinear HJB equation. This crate solves it by explicit finite
//! differences ([`hjb`]), together with its slow-volatility limit `P₀` and
//! the first-order corrector `P₁`, simulates the underlying dynamics
//! ([`sde`]), checks the second-order BSDE representation of the solution
//! ([`bsde`]), and runs δ-convergence studies ([`convergence`]).

pub mod black_scholes;
pub mod bsde;
pub mod convergence;
pub mod error;
pub mod hjb;
pub mod model;
pub mod rng;
pub mod sde;

pub use error::{Error, Result};
pub use model::{
    payoff_eval, vol_bounds, GridConfig, GridSpec, ModelConfig, ModelParams, PiecewiseLinearPayoff,
    ASSUMED_VOL_OF_VOL,
};
