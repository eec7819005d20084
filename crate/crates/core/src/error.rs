use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("backward root must be a single element, got shape {0:?}")]
    NotScalar(Vec<usize>),
    #[error("backward root is detached from the tape")]
    Detached,
    #[error("differentiation target #{0} is not on the tape")]
    NotOnTape(usize),
    #[error("non-finite values in {0}")]
    NonFinite(String),
    #[error("unreachable target cell {0:?}")]
    Unreachable((usize, usize)),
    #[error("{0}")]
    Config(String),
    #[error("unknown config key `{0}`")]
    UnknownKey(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("checkpoint does not match the requested architecture: {0}")]
    ArchMismatch(String),
    #[error("{0}")]
    Unsupported(String),
    #[error("training halted: {aborted} of {workers} workers aborted")]
    TooManyAborts { aborted: usize, workers: usize },
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
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
