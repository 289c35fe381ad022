use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("validation failed: {0}")]
    Validation(String),

    #[error("derivative of order {order} needs more than {frames} frames")]
    InsufficientFrames { order: usize, frames: usize },

    #[error("non-finite value in {0}")]
    Numeric(String),

    #[error("sample rejected: {0}")]
    RejectedSample(String),

    #[error("optimization diverged at iteration {iteration}")]
    Divergence { iteration: usize },

    #[error("training diverged at epoch {epoch}")]
    TrainingDiverged { epoch: usize },

    #[error("stratification failed: {0}")]
    Stratification(String),

    #[error("empty input: {0}")]
    EmptyInput(String),

    #[error("class count mismatch: expected {expected}, found {found}")]
    ClassCount { expected: usize, found: usize },

    #[error("unsupported schema version {found} (expected {expected})")]
    SchemaVersion { expected: u32, found: u32 },

    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },

    #[error("cannot access {path}")]
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

    pub(crate) fn parse(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            message: message.into(),
        }
    }
}
