use thiserror::Error;

use crate::continuation::SolveReport;

#[derive(Debug, Error)]
pub enum FbvieError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("non-finite value at node ({i}, {j}) while evaluating {what}")]
    Numerical { i: usize, j: usize, what: &'static str },

    #[error("linear solve failed: {reason} (condition estimate {condition:e})")]
    SolverFailure { reason: String, condition: f64 },

    #[error("fixed-point iteration did not converge after {iterations} iterations (last change {last_change:e}, contraction ratio {ratio:.4})")]
    NoConvergence {
        iterations: usize,
        last_change: f64,
        ratio: f64,
    },

    #[error("continuation stalled at alpha = {alpha}: step fell below the minimum")]
    ContinuationFailure { alpha: f64, report: Box<SolveReport> },

    #[error("gamma estimation failed: {0}")]
    EstimationFailure(String),

    #[error("not applicable: {0}")]
    NotApplicable(String),
}

pub type Result<T> = std::result::Result<T, FbvieError>;

pub(crate) fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(FbvieError::InvalidArgument(msg.into()))
}
