use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Errors surfaced by the pipeline, grouped by what the operator has to fix.
#[derive(Debug, Error)]
pub enum Error {
    #[error("config error: {0}")]
    Config(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("malformed dump container at byte {offset}: {message}")]
    MalformedContainer { offset: u64, message: String },

    #[error("model asset error: {0}")]
    Asset(String),

    #[error("non-finite loss at step {step} (batch ids {batch_ids:?})")]
    NonFiniteLoss { step: usize, batch_ids: Vec<u64> },

    #[error("output directory {0} is locked by another run")]
    Locked(PathBuf),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Tensor(#[from] candle_core::Error),

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

    /// Process exit code for the CLI: 2 config, 3 data, 4 model asset, 1 other.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Locked(_) => 2,
            Error::Data(_) | Error::MalformedContainer { .. } | Error::Json(_) => 3,
            Error::Asset(_) | Error::Tensor(_) => 4,
            Error::NonFiniteLoss { .. } | Error::Io { .. } => 1,
        }
    }
}
