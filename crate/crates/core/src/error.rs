use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("episode already finished at t={0}")]
    EpisodeFinished(usize),
    #[error("empty buffer: {0}")]
    EmptyBuffer(String),
    #[error("empty archive")]
    EmptyArchive,
    #[error("stale tape: {0}")]
    StaleTape(String),
    #[error("checkpoint format: {0}")]
    CheckpointFormat(String),
    #[error("config: {0}")]
    Config(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}
