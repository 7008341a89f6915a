//! Crate-wide error type.
//!
//! Every fallible operation in this crate returns [`Error`].  The variants are
//! deliberately coarse: they map one-to-one onto the stable integer codes used
//! by the C ABI wrapper, so adding a variant is a semver-relevant change.

use thiserror::Error;

/// Errors surfaced by the verification toolkit.
#[derive(Debug, Error)]
pub enum Error {
    /// Operands have incompatible or out-of-range shapes.
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    /// A constructor was handed NaN or infinite entries.
    #[error("non-finite entry: {0}")]
    NonFinite(String),

    /// An iterative numerical kernel (SVD, eigensolver, ALS fit) did not
    /// converge.  Never silently replaced by zeros; always surfaced.
    #[error("numerical failure: {0}")]
    Numerical(String),

    /// A physical-validity invariant failed (hermiticity, positivity,
    /// trace preservation, completeness, normalization, ...).
    #[error("validation failed: {0}")]
    Validation(String),

    /// Serialized input could not be decoded.
    #[error("parse error: {0}")]
    Parse(String),

    /// The request is well-formed but outside the supported domain
    /// (e.g. an operator Schmidt rank with no canonical form, or a state
    /// exceeding the global dimension cap).
    #[error("unsupported: {0}")]
    Unsupported(String),

    /// Filesystem-level failure while reading or writing artifacts.
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Stable integer code for the C ABI (0 is reserved for success).
    pub fn code(&self) -> i32 {
        match self {
            Error::Dimension(_) => 1,
            Error::NonFinite(_) => 2,
            Error::Numerical(_) => 3,
            Error::Validation(_) => 4,
            Error::Parse(_) => 5,
            Error::Unsupported(_) => 6,
            Error::Io(_) => 7,
        }
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Parse(e.to_string())
    }
}

/// Convenience alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;
