//! Error type shared across the crate.

use thiserror::Error;

/// Errors raised by tensors, models, losses, attacks, training and I/O.
#[derive(Debug, Error)]
pub enum Error {
    /// Dimension or shape disagreement between operands.
    #[error("shape mismatch: {0}")]
    Shape(String),

    /// An argument violates a documented precondition.
    #[error("invalid parameter: {0}")]
    Param(String),

    /// Non-finite values or other numeric failures.
    #[error("numeric error: {0}")]
    Numeric(String),

    /// An API contract was violated (e.g. backward on a non-scalar).
    #[error("contract violation: {0}")]
    Contract(String),

    /// Malformed binary or text input, with the byte offset of the problem.
    #[error("format error at byte {offset}: {msg}")]
    Format { offset: u64, msg: String },

    /// Invalid or unparseable run configuration.
    #[error("config error: {0}")]
    Config(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
