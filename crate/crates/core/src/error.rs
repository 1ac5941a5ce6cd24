use thiserror::Error;

/// Errors raised by the library. Escapes and infeasible section points are
/// reported through result flags and masks, not through this type.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch: expected {expected} degrees of freedom, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("wiener path exhausted: needed {needed} increments, path holds {available}")]
    IncrementsExhausted { needed: usize, available: usize },

    #[error("empty grid")]
    EmptyGrid,

    #[error("series has no dominant spectral peak")]
    NoPeak,
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Error {
    Error::InvalidParameter {
        name,
        reason: reason.into(),
    }
}
