use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{file}:{line}: {message}")]
    Parse {
        file: PathBuf,
        line: u64,
        message: String,
    },

    #[error("{file}: missing required column `{column}`")]
    MissingColumn { file: PathBuf, column: String },

    #[error("duplicate frame time {time} s ({first} and {second})")]
    DuplicateFrameTime {
        time: f64,
        first: PathBuf,
        second: PathBuf,
    },

    #[error("frames are not sorted by time (t={previous} s followed by t={next} s)")]
    UnsortedFrames { previous: f64, next: f64 },

    #[error("frames at t={first} s and t={second} s both map to canonical step {step}")]
    StepCollision { step: usize, first: f64, second: f64 },

    #[error("invalid grid: {0}")]
    Grid(String),

    #[error("invalid box `{name}`: {reason}")]
    Box { name: String, reason: String },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("embedding error: {0}")]
    Embedding(String),

    #[error("{0}")]
    Incompatible(String),

    #[error("projection error: {0}")]
    Projection(String),

    #[error("out of range: {0}")]
    OutOfRange(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
