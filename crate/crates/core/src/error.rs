use thiserror::Error;

/// Errors raised across the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("point {x} is outside the domain [{lo}, {hi}] of map {map}")]
    Domain {
        map: String,
        x: f64,
        lo: f64,
        hi: f64,
    },

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("no convergence after {iterations} iterations (residual {residual:e})")]
    NonConvergence { iterations: usize, residual: f64 },

    #[error(
        "precision exhausted at step {step}: error estimate 2^{log2_error:.1} exceeds threshold 2^{log2_threshold:.1}"
    )]
    PrecisionAbort {
        step: usize,
        log2_error: f64,
        log2_threshold: f64,
    },

    #[error("index {index} out of range for stream of {len} bits")]
    OutOfRange { index: usize, len: usize },

    #[error("invalid config value at `{key}`: {message}")]
    Config { key: String, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn config(key: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            key: key.into(),
            message: message.into(),
        }
    }

    pub fn is_precision_abort(&self) -> bool {
        matches!(self, Error::PrecisionAbort { .. })
    }
}
