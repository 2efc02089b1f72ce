use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("record {record_id}: {invariant}")]
    Validation { record_id: String, invariant: String },

    #[error("precondition failed: {0}")]
    Precondition(String),

    #[error("client error: {0}")]
    Client(#[from] ClientError),

    #[error("training aborted: {0}")]
    Training(String),

    #[error("serialization error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn validation(record_id: impl Into<String>, invariant: impl Into<String>) -> Self {
        Error::Validation {
            record_id: record_id.into(),
            invariant: invariant.into(),
        }
    }

    pub fn precondition(message: impl Into<String>) -> Self {
        Error::Precondition(message.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

/// Failure reported by a search engine or LLM client.
#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum ClientError {
    #[error("request failed: {0}")]
    Request(String),
    #[error("request timed out after {0} ms")]
    Timeout(u64),
    #[error("missing credentials: {0}")]
    MissingCredentials(String),
    #[error("script exhausted")]
    Exhausted,
}
