use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    /// Tensor or vector dimensions do not line up.
    #[error("shape mismatch: {0}")]
    Shape(String),

    /// A value is outside its mathematical domain (e.g. non-positive stddev).
    #[error("domain error: {0}")]
    Domain(String),

    /// Caller-supplied input is invalid.
    #[error("invalid input: {0}")]
    Input(String),

    /// An operation was called in a state that violates its contract.
    #[error("precondition violated: {0}")]
    Precondition(String),

    /// Internal bookkeeping is inconsistent.
    #[error("logic error: {0}")]
    Logic(String),

    /// Task-stream generation could not satisfy its constraints.
    #[error("stream generation failed: {0}")]
    Generation(String),

    /// A NaN or infinity surfaced where a finite value is required.
    #[error("non-finite value: {0}")]
    NonFinite(String),

    /// A manifest, config, or checkpoint could not be decoded.
    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
