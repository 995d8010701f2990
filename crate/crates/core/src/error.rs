use thiserror::Error;

/// Errors raised by the detection engine.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("observation {x} is outside the support of {density}")]
    Domain { x: f64, density: String },

    #[error("numerical integration failed: {reason} (estimate {estimate:e}, error {error:e}, {intervals} intervals)")]
    Numeric {
        reason: String,
        estimate: f64,
        error: f64,
        intervals: usize,
    },

    #[error("scenario error: {0}")]
    Scenario(String),

    #[error("protocol error: {0}")]
    Protocol(String),

    #[error("estimation error: {0}")]
    Estimation(String),
}

pub type Result<T> = std::result::Result<T, Error>;
