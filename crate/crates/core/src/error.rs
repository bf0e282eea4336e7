use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = StarError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum StarError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("validation failed: {0}")]
    Validation(String),

    #[error("vertex {vertex} is unreachable from the seed set")]
    Unreachable { vertex: usize },

    #[error("unsupported format: {0}")]
    Format(String),

    #[error("numerical failure at epoch {epoch}, batch {batch} ({block}): {message}")]
    Numerical {
        epoch: usize,
        batch: usize,
        block: String,
        message: String,
    },

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl StarError {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        StarError::InvalidArgument(msg.into())
    }

    pub(crate) fn validation(msg: impl Into<String>) -> Self {
        StarError::Validation(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        StarError::Io {
            path: path.into(),
            source,
        }
    }
}
