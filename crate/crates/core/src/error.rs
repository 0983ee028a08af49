//! Error types shared across the pipeline.

use thiserror::Error;

/// Errors produced while parsing or validating a `.opld` dataset file.
///
/// Every variant names the offending field so a corrupted file can be
/// diagnosed from the message alone.
#[derive(Debug, Error)]
pub enum FormatError {
    #[error("bad magic: expected \"OPLD\", found {found:?}")]
    BadMagic { found: [u8; 4] },
    #[error("unsupported version: expected 1, found {found}")]
    BadVersion { found: u32 },
    #[error("header field {field} must be >= 1, found 0")]
    ZeroDim { field: &'static str },
    #[error("file truncated: expected {expected} bytes, found {actual}")]
    Truncated { expected: u64, actual: u64 },
    #[error("file has {extra} trailing bytes past the declared payload")]
    TrailingBytes { extra: u64 },
    #[error("episode {episode}: invalid label byte {value} (expected -1, 0 or 1)")]
    BadLabel { episode: u64, value: i8 },
    #[error("episode {episode}, step {step}: non-finite {field} value")]
    NonFinite {
        episode: u64,
        step: usize,
        field: &'static str,
    },
    #[error("duplicate episode id {id}")]
    DuplicateId { id: u64 },
}

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    /// A precondition on an operation's inputs was violated.
    #[error("domain error: {0}")]
    Domain(String),
    /// Vector or matrix dimensions do not line up.
    #[error("shape error: {context}: expected {expected}, found {found}")]
    Shape {
        context: &'static str,
        expected: usize,
        found: usize,
    },
    /// A `.opld` file failed to parse or validate.
    #[error("format error: {0}")]
    Format(#[from] FormatError),
    /// A symmetry schema is inconsistent with itself or with the data dims.
    #[error("schema error: {0}")]
    Schema(String),
    /// Training produced a non-finite loss.
    #[error("training error: {0}")]
    Training(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Short machine-parsable kind tag, used by the CLI error line.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Domain(_) => "domain",
            Error::Shape { .. } => "shape",
            Error::Format(_) => "format",
            Error::Schema(_) => "schema",
            Error::Training(_) => "training",
            Error::Io(_) => "io",
            Error::Json(_) => "json",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn domain(msg: impl Into<String>) -> Error {
    Error::Domain(msg.into())
}

pub(crate) fn schema(msg: impl Into<String>) -> Error {
    Error::Schema(msg.into())
}
