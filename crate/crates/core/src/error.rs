use std::path::{Path, PathBuf};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum HavaError {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    /// An action set that must be non-empty (RB output, projection target) was empty.
    #[error("empty action set")]
    EmptyActionSet,

    #[error("action {action} does not match the kind of action set {set}")]
    ActionKindMismatch { action: String, set: String },

    #[error("action {0} is outside the action table")]
    UnknownAction(usize),

    #[error("environment is in a terminal state")]
    Terminal,

    #[error("malformed input: {0}")]
    Format(String),

    #[error("empty sample")]
    EmptySample,

    #[error("dataset hash mismatch: model was fitted on {expected}, dataset is {found}")]
    DatasetMismatch { expected: String, found: String },

    #[error("non-finite Q value at episode {episode}")]
    Divergence { episode: usize },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl HavaError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        HavaError::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}

impl From<std::io::Error> for HavaError {
    fn from(source: std::io::Error) -> Self {
        HavaError::Io {
            path: PathBuf::new(),
            source,
        }
    }
}

pub type Result<T, E = HavaError> = std::result::Result<T, E>;
