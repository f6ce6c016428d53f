use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = DsnError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum DsnError {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("non-finite value produced by {0}")]
    NonFinite(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("input too short: need at least {needed} samples, got {got}")]
    TooShort { needed: usize, got: usize },

    #[error("{0}")]
    UnsupportedFormat(String),

    #[error("missing weight tensor `{0}`")]
    MissingWeight(String),

    #[error("unexpected weight tensor `{0}`")]
    UnexpectedWeight(String),

    #[error("weight file: {0}")]
    WeightFile(String),

    #[error("config: {0}")]
    Config(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl DsnError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        DsnError::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        DsnError::Shape(msg.into())
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        DsnError::InvalidArgument(msg.into())
    }
}
