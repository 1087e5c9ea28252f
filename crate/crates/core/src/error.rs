use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("ingestion error in {path}{}: {message}", line.map(|l| format!(" (line {l})")).unwrap_or_default())]
    Ingestion {
        path: PathBuf,
        line: Option<u64>,
        message: String,
    },
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error("numeric error: {0}")]
    Numeric(String),
    #[error("encoding error: {0}")]
    Encoding(String),
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error("metric error: {0}")]
    Metric(String),
    #[error("vocabulary mismatch: {0}")]
    VocabularyMismatch(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn protocol(msg: impl Into<String>) -> Self {
        Error::Protocol(msg.into())
    }

    pub(crate) fn numeric(msg: impl Into<String>) -> Self {
        Error::Numeric(msg.into())
    }

    pub(crate) fn metric(msg: impl Into<String>) -> Self {
        Error::Metric(msg.into())
    }
}
