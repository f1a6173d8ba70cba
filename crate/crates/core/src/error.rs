use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = QuistError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum QuistError {
    #[error("{path}: format error at {location}: {message}")]
    Format {
        path: PathBuf,
        location: String,
        message: String,
    },

    #[error("validation failed for ids [{}]: {message}", ids.join(", "))]
    Validation { ids: Vec<String>, message: String },

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("usage error: {0}")]
    Usage(String),

    #[error("lookup failed: {0}")]
    Lookup(String),

    #[error("insufficient exemplar pool for type {qtype}: need {needed}, have {available}")]
    InsufficientPool {
        qtype: String,
        needed: usize,
        available: usize,
    },

    #[error("input error: {0}")]
    Input(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("tensor error: {0}")]
    Tensor(#[from] candle_core::Error),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl QuistError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        QuistError::Io {
            path: path.into(),
            source,
        }
    }

    /// Errors caused by bad input or configuration, as opposed to failures
    /// that happen while work is in progress.
    pub fn is_usage(&self) -> bool {
        matches!(
            self,
            QuistError::Argument(_) | QuistError::Usage(_) | QuistError::Config(_)
        )
    }
}
