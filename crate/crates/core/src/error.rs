use std::path::PathBuf;

use crate::types::Violation;

/// Errors raised by the numeric and data-handling parts of the crate.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// A metric or loss whose value is mathematically undefined for the input
    /// (constant map, zero mass, constant ground truth, ...).
    #[error("undefined metric: {0}")]
    UndefinedMetric(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("parse error: {0}")]
    Parse(String),

    /// One or more records failed validation. Each entry names the offending record.
    #[error("validation failed: {}", format_violations(.0))]
    Validation(Vec<RecordViolation>),

    #[error("image codec error: {0}")]
    Codec(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// A validation failure tied to the record it was found in.
#[derive(Debug, Clone, PartialEq)]
pub struct RecordViolation {
    pub record_id: String,
    pub violation: Violation,
}

impl std::fmt::Display for RecordViolation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}: {}", self.record_id, self.violation)
    }
}

fn format_violations(v: &[RecordViolation]) -> String {
    v.iter().map(ToString::to_string).collect::<Vec<_>>().join("; ")
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

impl From<image::ImageError> for Error {
    fn from(e: image::ImageError) -> Self {
        Error::Codec(e.to_string())
    }
}
