use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = CwhError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum CwhError {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{file}:{line}: {message}")]
    Parse {
        file: String,
        line: u64,
        message: String,
    },
    #[error("invalid data: {0}")]
    Data(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("unsupported: {0}")]
    Unsupported(String),
}

impl CwhError {
    /// Stable machine-readable category, used as the CLI error prefix.
    pub fn category(&self) -> &'static str {
        match self {
            CwhError::Io { .. } => "io",
            CwhError::Parse { .. } => "parse",
            CwhError::Data(_) => "data",
            CwhError::Config(_) => "config",
            CwhError::Precondition(_) => "precondition",
            CwhError::NonFinite(_) => "numeric",
            CwhError::Unsupported(_) => "unsupported",
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CwhError::Io {
            path: path.into(),
            source,
        }
    }
}
