//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum SwsError {
    /// A file does not match the expected on-disk layout.
    #[error("format error: {0}")]
    Format(String),

    /// Payload bytes parsed, but the values violate a data invariant.
    #[error("data error: {0}")]
    Data(String),

    /// A parameter is outside its documented domain.
    #[error("parameter error: {0}")]
    Parameter(String),

    /// An operation was called in a way its contract forbids.
    #[error("usage error: {0}")]
    Usage(String),

    /// Time-lateral plane cleaning could not fit the wavefront.
    #[error("cleaning error: {0}")]
    Cleaning(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, SwsError>;
