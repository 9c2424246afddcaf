use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("graph contains a directed cycle")]
    Cyclic,

    #[error("invalid edge {0} -> {1} for p = {2}")]
    InvalidEdge(usize, usize, usize),

    #[error("failed to sample an acyclic graph after {0} attempts")]
    ResamplingFailed(usize),

    #[error("matrix is not positive definite ({0})")]
    NotPositiveDefinite(String),

    #[error("ill-conditioned covariance model (condition estimate {condition:.3e})")]
    IllConditioned { condition: f64 },

    #[error("constraint violated: {0}")]
    ConstraintViolation(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("parse error: {0}")]
    Parse(String),
}

pub type Result<T> = std::result::Result<T, Error>;
