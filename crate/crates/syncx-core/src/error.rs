//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Incompatible tensor/kernel shapes or an inconsistent configuration.
    #[error("configuration error: {0}")]
    Config(String),

    /// Shapes that should agree do not.
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    /// NaN/Inf where a finite value is required.
    #[error("numeric error: {0}")]
    Numeric(String),

    /// A caller broke a documented precondition.
    #[error("contract violation: {0}")]
    Contract(String),

    /// Malformed file contents (dataset, checkpoint, config).
    #[error("format error: {0}")]
    Format(String),

    /// Scene generation could not satisfy the spec (e.g. placement failure).
    #[error("generation error: {0}")]
    Generation(String),

    /// Evaluation asked for on an empty foreground.
    #[error("empty evaluation: {0}")]
    EmptyEval(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub fn shape(msg: impl Into<String>) -> Self {
        Error::ShapeMismatch(msg.into())
    }

    pub fn numeric(msg: impl Into<String>) -> Self {
        Error::Numeric(msg.into())
    }

    pub fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }

    pub fn format(msg: impl Into<String>) -> Self {
        Error::Format(msg.into())
    }
}
