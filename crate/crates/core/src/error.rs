//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum SpearError {
    /// A precondition on an argument was violated.
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// A numeric invariant broke (non-finite value, empty distribution, ...).
    #[error("numeric error: {0}")]
    Numeric(String),

    /// Two vectors that must share a dimension do not.
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("serialization error: {0}")]
    Serde(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, SpearError>;

impl SpearError {
    pub fn invalid(msg: impl Into<String>) -> Self {
        SpearError::InvalidInput(msg.into())
    }

    pub fn numeric(msg: impl Into<String>) -> Self {
        SpearError::Numeric(msg.into())
    }
}
