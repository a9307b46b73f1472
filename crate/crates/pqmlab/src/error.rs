//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    /// A corpus/checkpoint line or file that could not be decoded.
    #[error("parse error at {location}: {message}")]
    Parse { location: String, message: String },

    /// A decoded value that breaks a documented invariant.
    #[error("invariant violation in {field}: {message}")]
    Invariant { field: String, message: String },

    /// Mixed feature dimensions inside one corpus.
    #[error("feature dimension mismatch for {question_id}: expected {expected}, found {found}")]
    FeatureDim {
        question_id: String,
        expected: usize,
        found: usize,
    },

    /// Input outside a function's mathematical domain.
    #[error("domain error: {0}")]
    Domain(String),

    /// Incompatible shapes or horizons between two inputs.
    #[error("mismatch: {0}")]
    Mismatch(String),

    /// An operation that refuses to run because a precondition guard failed.
    #[error("refused: {0}")]
    Refused(String),

    #[error("config error: {0}")]
    Config(String),
}
