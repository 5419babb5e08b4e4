use std::path::PathBuf;

use thiserror::Error;

use crate::grammar::ParseError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {left_w}x{left_h} vs {right_w}x{right_h}")]
    DimensionMismatch {
        left_w: usize,
        left_h: usize,
        right_w: usize,
        right_h: usize,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("mask is empty")]
    EmptyMask,

    #[error("invalid task `{id}`: {reason}")]
    InvalidTask { id: String, reason: String },

    #[error("episode already finished")]
    EpisodeFinished,

    #[error("rle counts sum to {got}, expected {expected}")]
    RleLength { got: u64, expected: u64 },

    #[error("malformed image file: {0}")]
    Image(String),

    #[error("{path}:{line}: {message}")]
    JsonLine {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("replay diverged at step {step}: {reason}")]
    ReplayDivergence { step: usize, reason: String },

    #[error("action text: {0}")]
    Parse(#[from] ParseError),

    #[error("remote: {0}")]
    Remote(String),

    #[error("train hook failed: {0}")]
    Hook(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn dims(a: (usize, usize), b: (usize, usize)) -> Self {
        Error::DimensionMismatch {
            left_w: a.0,
            left_h: a.1,
            right_w: b.0,
            right_h: b.1,
        }
    }
}
