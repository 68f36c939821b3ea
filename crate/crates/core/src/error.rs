use std::path::PathBuf;

use thiserror::Error;

/// Errors raised anywhere in the parsing pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    #[error("shape mismatch: expected {expected}, got {got}")]
    ShapeMismatch { expected: String, got: String },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("contract violation: {0}")]
    ContractViolation(String),

    #[error("parse error in {path}: {msg}")]
    Parse { path: String, msg: String },

    #[error("missing video `{0}`")]
    MissingVideo(String),

    #[error("non-finite loss at iteration {iteration} (video `{video_id}`): {detail}")]
    NonFiniteLoss {
        iteration: usize,
        video_id: String,
        detail: String,
    },

    #[error("split hygiene violated: training video `{0}` carries ground-truth segment labels")]
    SplitHygiene(String),

    #[error("infeasible synthetic configuration: {0}")]
    Infeasible(String),

    #[error("checkpoint format: {0}")]
    Checkpoint(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn shape(expected: impl ToString, got: impl ToString) -> Self {
        Error::ShapeMismatch {
            expected: expected.to_string(),
            got: got.to_string(),
        }
    }
}
