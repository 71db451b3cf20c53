use thiserror::Error;

/// Errors raised by model construction, solvers and simulators.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// A constructor rejected a value. `field` names the offending input.
    #[error("invalid `{field}`: {reason}")]
    Invalid { field: &'static str, reason: String },

    /// The explicit scheme would be unstable with the requested step count.
    #[error("CFL violation: n_t = {n_t} is below the admissible minimum {required}")]
    Cfl { n_t: usize, required: usize },

    /// A solver produced a NaN or infinity.
    #[error("non-finite value at time index {time_index}, node (i={i}, j={j})")]
    NonFinite { time_index: usize, i: usize, j: usize },

    /// Two surfaces (or a surface and a grid) do not share a discretisation.
    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    /// A surface of the wrong kind was supplied.
    #[error("wrong surface kind: expected {expected}, got {got}")]
    WrongKind { expected: &'static str, got: &'static str },

    #[error("time index {0} is not retained by the surface")]
    MissingSlice(usize),

    /// The closed-form MGF hit a zero denominator.
    #[error("MGF pole: denominator {denominator:e} vanishes at eta={eta}, t={t}")]
    MgfPole { eta: f64, t: f64, denominator: f64 },

    /// A negative base was raised to a non-integer power.
    #[error("MGF term `{term}` has negative base {base:e}; real power undefined")]
    MgfNotReal { term: &'static str, base: f64 },

    #[error("point ({x}, {v}) lies outside the grid")]
    OutsideGrid { x: f64, v: f64 },

    /// Every simulated path left the grid.
    #[error("all {0} paths left the grid; enlarge the domain")]
    AllPathsDiscarded(usize),

    /// A sweep does not have enough rows above the noise floor to fit a slope.
    #[error("only {usable} usable rows for the slope fit (need at least 2)")]
    TooFewRows { usable: usize },

    /// A solve inside a sweep failed; `delta` identifies which.
    #[error("solve at delta={delta} failed: {source}")]
    AtDelta {
        delta: f64,
        #[source]
        source: Box<Error>,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(field: &'static str, reason: impl Into<String>) -> Error {
    Error::Invalid { field, reason: reason.into() }
}
