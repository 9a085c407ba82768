use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum ClipError {
    #[error("failed to access {path}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed file {path}: {message}")]
    Format { path: PathBuf, message: String },

    #[error("invalid sample {sample_id}: {message}")]
    Validation { sample_id: String, message: String },

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("invalid state: {0}")]
    State(String),

    #[error("configuration error at stage {stage}: {message}")]
    Config { stage: usize, message: String },
}

impl ClipError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        ClipError::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        ClipError::Format {
            path: path.into(),
            message: message.into(),
        }
    }

    pub(crate) fn argument(message: impl Into<String>) -> Self {
        ClipError::Argument(message.into())
    }
}

pub type Result<T, E = ClipError> = std::result::Result<T, E>;
