use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("slot {slot} out of range for a day with {slots} slots")]
    InvalidSlot { slot: usize, slots: usize },

    #[error("episode already finished")]
    EpisodeFinished,

    #[error("instance too large for exhaustive search: {combinations} combinations (limit {limit})")]
    InstanceTooLarge { combinations: f64, limit: f64 },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },

    #[error("missing upstream artifact: {0}")]
    Dependency(String),

    #[error("usage: {0}")]
    Usage(String),

    #[error("{0}")]
    Runtime(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub fn format(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        Error::Format { path: path.into(), message: message.into() }
    }
}
