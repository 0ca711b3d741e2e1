use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("dimension mismatch in {what}: expected {expected}, got {actual}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("label {label} at position {position} is outside [1, {max}]")]
    InvalidLabel {
        label: u32,
        position: usize,
        max: u32,
    },

    #[error("instance too large for exhaustive enumeration: T + U = {size} exceeds {limit}")]
    TooLarge { size: usize, limit: usize },

    #[error("non-finite value in gradient tensor `{tensor}`")]
    NonFinite { tensor: String },

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("utterance `{id}`: {message}")]
    Record { id: String, message: String },

    #[error("tensor container: {0}")]
    Container(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("config mismatch on field `{field}`: expected {expected}, found {found}")]
    ConfigMismatch {
        field: &'static str,
        expected: String,
        found: String,
    },

    #[error("wav: {0}")]
    Wav(#[from] hound::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }
}
