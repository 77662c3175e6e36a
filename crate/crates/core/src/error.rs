use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// An argument lies outside the domain of a function.
    #[error("domain error: {0}")]
    Domain(String),

    /// A ratio whose denominator vanished.
    #[error("undefined ratio: {0}")]
    UndefinedRatio(String),

    /// Malformed dataset or checkpoint bytes; `offset` is the byte position
    /// where decoding failed.
    #[error("format error at byte {offset}: {message}")]
    Format { offset: usize, message: String },

    #[error("budget error: {0}")]
    Budget(String),

    #[error("quota exhausted: {0}")]
    Quota(String),

    /// The annotation protocol was violated (re-query, query on a labeled sample, ...).
    #[error("protocol error: {0}")]
    Protocol(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("non-finite gradient in batch {batch}")]
    Training { batch: usize },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    /// Invalid experiment configuration; `pointer` is a JSON pointer to the key.
    #[error("config error at {pointer}: {message}")]
    Config { pointer: String, message: String },

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(offset: usize, message: impl Into<String>) -> Self {
        Error::Format {
            offset,
            message: message.into(),
        }
    }

    pub(crate) fn config(pointer: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            pointer: pointer.into(),
            message: message.into(),
        }
    }
}
