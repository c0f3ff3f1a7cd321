use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("empty input")]
    EmptyInput,
    #[error("empty selection")]
    EmptySelection,
    #[error("index {index} out of range for length {len}")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("degenerate covariance")]
    DegenerateCovariance,
    #[error("non-finite value at index {0}")]
    NonFinite(usize),
    #[error("invalid {field}: {reason}")]
    Invalid { field: String, reason: String },
    #[error("unknown class {0:?}")]
    UnknownClass(String),
    #[error("missing color for label {0:?}")]
    MissingColor(String),
    #[error("bad matrix file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Invalid {
            field: field.into(),
            reason: reason.into(),
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
