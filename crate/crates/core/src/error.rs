use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("degenerate configuration: {0}")]
    DegenerateConfiguration(String),

    #[error("degenerate patch: {0}")]
    DegeneratePatch(String),

    #[error("every voxel of the cylindrical volume is empty")]
    EmptyVolume,

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("no forward computation recorded")]
    NoForwardRecorded,

    #[error("batch too small: need at least 2 pairs, got {0}")]
    BatchTooSmall(usize),

    #[error("insufficient overlap: requested {requested} anchors, {available} available")]
    InsufficientOverlap { requested: usize, available: usize },

    #[error("no consensus: best hypothesis has {0} inliers")]
    NoConsensus(usize),

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("{path}: bad magic, expected {expected:?}")]
    MagicMismatch { path: PathBuf, expected: String },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }
}
