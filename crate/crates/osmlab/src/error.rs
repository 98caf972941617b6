//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("invalid state: {0}")]
    InvalidState(String),
    #[error("state out of range: {0}")]
    StateOutOfRange(String),
    #[error("unsupported degree {0}, supported range is 1..=5")]
    UnsupportedDegree(usize),
    #[error("singular matrix: {0}")]
    SingularMatrix(String),
    #[error("singular patch at vertex {vertex}: {detail}")]
    SingularPatch { vertex: usize, detail: String },
    #[error("level mismatch: {0}")]
    LevelMismatch(String),
    #[error("solver not ready: {0}")]
    NotReady(String),
    #[error("solve aborted: {0}")]
    Aborted(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn invalid_argument(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub fn invalid_state(msg: impl Into<String>) -> Self {
        Error::InvalidState(msg.into())
    }
}
