use alloc::string::String;
use alloc::vec::Vec;

pub type Result<T> = core::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("infeasible instance: {0}")]
    InfeasibleInstance(String),
    #[error("invalid box: lower > upper at coordinate {index}")]
    InvalidBox { index: usize },
    #[error("infeasible set: no point of the box satisfies the halfspace")]
    InfeasibleSet,
    #[error("iteration cap exceeded (residual {residual:e})")]
    MaxIterExceeded { best: Vec<f64>, residual: f64 },
    #[error("not supported: {0}")]
    NotSupported(&'static str),
    #[error("preconditioner check failed: smallest eigenvalue {min_eigenvalue} < tau {tau}")]
    PdCheckFailed { min_eigenvalue: f64, tau: f64 },
    #[error("invalid relaxation schedule: {0}")]
    InvalidGamma(String),
    #[error("non-finite iterate at iteration {iteration}")]
    NonFiniteIterate { iteration: usize },
    #[error("graph schedule exhausted at iteration {iteration} (horizon {horizon})")]
    ScheduleExhausted { iteration: usize, horizon: usize },
    #[error("index out of range: {0}")]
    RangeError(String),
    #[error("network assumption violated: {0}")]
    AssumptionViolated(String),
    #[error("reference solution required but missing")]
    MissingReference,
    #[error("reference solver did not converge (residual {residual:e})")]
    NoConvergence { best: Vec<f64>, residual: f64 },
    #[error("point is not strictly feasible (min slack {slack})")]
    NotStrictlyFeasible { slack: f64 },
}

pub(crate) fn check_len(expected: usize, found: usize) -> Result<()> {
    if expected == found {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected, found })
    }
}
