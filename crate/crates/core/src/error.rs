use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the bandwidth twin pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("degenerate range: min and max are both {0}")]
    DegenerateRange(f64),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("shape mismatch: expected {expected}, got {actual}")]
    Shape { expected: usize, actual: usize },

    #[error("index out of range: {index} (len {len})")]
    Index { index: usize, len: usize },

    #[error("invalid state: {0}")]
    State(String),

    #[error("config error at `{path}`: {message}")]
    Config { path: String, message: String },

    #[error("io error on {}: {message}", path.display())]
    Io { path: PathBuf, message: String },
}

impl Error {
    pub fn param(msg: impl Into<String>) -> Self {
        Error::Parameter(msg.into())
    }

    pub fn config(path: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            path: path.into(),
            message: message.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, err: impl std::fmt::Display) -> Self {
        Error::Io {
            path: path.into(),
            message: err.to_string(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
