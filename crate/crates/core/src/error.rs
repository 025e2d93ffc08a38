use thiserror::Error;

/// Errors raised anywhere in the estimation pipeline.
#[derive(Debug, Error)]
pub enum DcsError {
    /// Malformed or out-of-contract input.
    #[error("input error: {0}")]
    Input(String),

    /// A numerical step failed (singular matrix, non-positive variance, ...).
    #[error("numeric error: {0}")]
    Numeric(String),

    /// An iterative optimizer or projection did not converge.
    #[error("convergence error: {message}")]
    Convergence {
        message: String,
        /// Best iterate found, in the caller's parameter space.
        best: Vec<f64>,
    },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl DcsError {
    pub(crate) fn input(msg: impl Into<String>) -> Self {
        Self::Input(msg.into())
    }

    pub(crate) fn numeric(msg: impl Into<String>) -> Self {
        Self::Numeric(msg.into())
    }
}

pub type Result<T> = std::result::Result<T, DcsError>;
