use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("kernel singularity at coincident points; use a singular quadrature instead")]
    Singularity,

    #[error("query outside the grid extent: {0}")]
    Extrapolation(String),

    #[error("precondition unmet: {0}")]
    Precondition(String),

    #[error("iteration is not contracting (ratio >= 1 for {consecutive} consecutive steps, last ratio {last_ratio:.4})")]
    NoContraction { consecutive: usize, last_ratio: f64 },

    #[error("iteration diverged at step {iteration}: {reason}")]
    Diverged { iteration: usize, reason: String },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("malformed input: {0}")]
    Format(String),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}
