use std::path::PathBuf;

use thiserror::Error;

/// Errors surfaced by the library and the command-line tool.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid scene: {0}")]
    InvalidScene(String),

    #[error("sequence `{0}` has no pair of consecutive valid points")]
    NoValidPair(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("attention query row {0} is active but admits no key")]
    EmptyAttentionRow(usize),

    #[error("polyline {0} has no valid point to pool over")]
    EmptyPolyline(usize),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("map input required but the scene carries no map polylines")]
    MissingMap,

    #[error("degenerate drivable polygon {0}")]
    DegeneratePolygon(usize),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}: {msg}")]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("dataset split `{0}` is empty")]
    EmptySplit(String),

    #[error("non-finite loss at epoch {epoch}, step {step}")]
    NonFinite { epoch: usize, step: usize },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
