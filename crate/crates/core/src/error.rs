//! Error taxonomy shared across the crate.
//!
//! The four variants separate problems a caller can fix by editing
//! configuration from genuine runtime failures, so front ends can map them
//! onto distinct exit codes.

use thiserror::Error;

/// Failure reported by construction, transform, or solver routines.
#[derive(Debug, Error)]
pub enum Error {
    /// Invalid static configuration: bad parameter combinations, unsupported
    /// dimensions, malformed specs.
    #[error("configuration: {0}")]
    Config(String),

    /// Two otherwise valid objects do not fit together (vector lengths,
    /// grid shapes, mode counts).
    #[error("shape mismatch: {0}")]
    Shape(String),

    /// An argument lies outside the mathematical domain of the operation,
    /// e.g. a non-positive length scale or conductivity.
    #[error("domain: {0}")]
    Domain(String),

    /// A solver or accumulation failed to meet its accuracy contract.
    #[error("numerical: {0}")]
    Numerical(String),
}

impl Error {
    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub fn numerical(msg: impl Into<String>) -> Self {
        Error::Numerical(msg.into())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
