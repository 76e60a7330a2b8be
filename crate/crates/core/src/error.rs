//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// Unknown preset or selector name.
    #[error("not found: {0}")]
    NotFound(String),

    /// A tensor/grid dimension constraint was violated.
    #[error("invalid shape: {0}")]
    InvalidShape(String),

    /// A numeric argument was outside its valid domain.
    #[error("domain error: {0}")]
    Domain(String),

    /// Runtime tensor shapes disagree.
    #[error("shape mismatch: {0}")]
    Shape(String),

    /// A serialized mask or report could not be parsed.
    #[error("parse error: {0}")]
    Parse(String),
}

pub type Result<T> = std::result::Result<T, Error>;
