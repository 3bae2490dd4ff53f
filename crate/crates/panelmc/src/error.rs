//! Crate-wide error type.

use thiserror::Error;

/// Convenience alias used by all fallible APIs in this crate.
pub type Result<T> = std::result::Result<T, Error>;

/// Errors produced while validating inputs, fitting, or running pipelines.
#[derive(Debug, Error)]
pub enum Error {
    /// Two arrays that must agree in shape do not.
    #[error("dimension mismatch for {what}: expected {expected}, got {actual}")]
    DimensionMismatch {
        what: &'static str,
        expected: String,
        actual: String,
    },

    /// An input array contains NaN or infinite entries.
    #[error("{what} contains non-finite values")]
    NonFinite { what: &'static str },

    /// The treatment indicator contains entries other than 0 or 1.
    #[error("treatment matrix must be binary (0/1); found {found} at ({row}, {col})")]
    NotBinary { found: f64, row: usize, col: usize },

    /// An operation that needs treated cells was given a panel without any.
    #[error("{operation} requires at least one treated cell, but all cells are controls")]
    NoTreatedCells { operation: &'static str },

    /// An operation that needs control cells was given a panel without any.
    #[error("{operation} requires at least one control cell, but all cells are treated")]
    NoControlCells { operation: &'static str },

    /// A configuration value is outside its valid range.
    #[error("invalid configuration: {message}")]
    InvalidConfig { message: String },

    /// Permutation inference is only valid for fits that imposed the
    /// no-effect null on all cells.
    #[error("permutation inference requires an imposed-null fit; this fit used control cells only")]
    InferenceRequiresImposedNull,

    /// A config file or CSV value failed to parse.
    #[error("parse error in {context}: {message}")]
    Parse { context: String, message: String },

    /// Underlying filesystem failure.
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    /// CSV encoding/decoding failure.
    #[error("csv error on {path}: {source}")]
    Csv {
        path: String,
        #[source]
        source: csv::Error,
    },

    /// JSON serialization failure (run manifests).
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Helper for building [`Error::DimensionMismatch`] from shape pairs.
    pub(crate) fn shape(what: &'static str, expected: impl std::fmt::Debug, actual: impl std::fmt::Debug) -> Self {
        Error::DimensionMismatch {
            what,
            expected: format!("{expected:?}"),
            actual: format!("{actual:?}"),
        }
    }

    /// Helper for building [`Error::InvalidConfig`].
    pub(crate) fn config(message: impl Into<String>) -> Self {
        Error::InvalidConfig { message: message.into() }
    }
}
