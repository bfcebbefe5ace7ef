use std::path::PathBuf;

use thiserror::Error;

/// Errors raised anywhere in the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("shape mismatch: expected {expected}, got {got}")]
    Shape { expected: usize, got: usize },

    #[error("non-finite value at batch index {index}: {what}")]
    Numeric { index: usize, what: String },

    #[error("unsupported environment: {0}")]
    UnsupportedEnv(String),

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("schema error at line {line}: {msg}")]
    Schema { line: usize, msg: String },

    #[error("no data to sample from")]
    EmptySource,

    #[error("config error: {0}")]
    Config(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors that come from non-finite arithmetic during training.
    pub fn is_numeric(&self) -> bool {
        matches!(self, Error::Numeric { .. })
    }
}

pub type Result<T> = std::result::Result<T, Error>;
