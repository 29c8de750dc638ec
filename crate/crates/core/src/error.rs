use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = PodError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum PodError {
    #[error("io error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("failed to load {path}: {message}")]
    Load { path: PathBuf, message: String },

    #[error("{file}:{line}: {message}")]
    Parse {
        file: PathBuf,
        line: usize,
        message: String,
    },

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("training diverged at epoch {epoch}, batch {batch}: non-finite loss")]
    Diverged { epoch: usize, batch: usize },

    #[error("non-finite model output: {0}")]
    NonFinite(String),

    #[error("attack diverged at iteration {iteration}: non-finite gradient")]
    AttackDiverged { iteration: usize },

    #[error("invalid config at `{field}`: {message}")]
    Config { field: String, message: String },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),
}

impl PodError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        PodError::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn contract(msg: impl Into<String>) -> Self {
        PodError::Contract(msg.into())
    }

    pub(crate) fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        PodError::Config {
            field: field.into(),
            message: message.into(),
        }
    }
}
