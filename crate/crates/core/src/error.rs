use thiserror::Error;

/// Errors raised by the laboratory.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("non-finite policy parameter at index {0}")]
    NonFiniteTheta(usize),

    #[error("kernel is not ergodic: {0}")]
    NotErgodic(String),

    /// Negative-definiteness margin of the TD matrix is not positive.
    #[error("assumption violated: lambda = {lambda:e} at probe {probe} (theta = {theta:?})")]
    AssumptionViolated {
        lambda: f64,
        probe: usize,
        theta: Vec<f64>,
    },

    #[error("non-finite iterate at step {step}: {what}")]
    NonFiniteIterate { step: u64, what: &'static str },

    #[error("empty sample set: {0}")]
    EmptySamples(&'static str),

    #[error("{0}")]
    Analysis(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
