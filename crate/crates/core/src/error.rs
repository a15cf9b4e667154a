//! Shared error type for all estimation and learning routines.

use thiserror::Error;

/// Errors produced by the estimation, simulation, learning and scoring
/// routines in this crate.
#[derive(Debug, Clone, Error)]
pub enum Error {
    /// A precondition on the inputs was violated (wrong shapes, missing
    /// labels, out-of-range settings, mismatched key sets).
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// The inputs are structurally valid but leave the requested quantity
    /// undefined (e.g. no good-labeled measurements for the conservative
    /// estimator).
    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    /// The miscalibration slope is zero, so readings cannot be inverted.
    #[error("singular calibration: slope alpha must be nonzero")]
    SingularCalibration,

    /// A regression design matrix is singular and no ridge penalty was
    /// supplied to regularize it.
    #[error("singular fit: {0}")]
    SingularFit(String),

    /// A metric is undefined on the given data (e.g. R^2 with constant
    /// actuals).
    #[error("undefined metric: {0}")]
    UndefinedMetric(String),

    /// Every training restart aborted without producing usable parameters.
    #[error("training failure: {0}")]
    TrainingFailure(String),
}

pub type Result<T> = std::result::Result<T, Error>;
