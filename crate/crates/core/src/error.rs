use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("invalid topology: {0}")]
    InvalidTopology(String),

    #[error("cycle {cycle} is outside the schedule 1..={last}")]
    CycleOutOfRange { cycle: u32, last: u32 },

    #[error("invalid state: {0}")]
    InvalidState(String),

    #[error("invalid feedback: {0}")]
    InvalidFeedback(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn invalid_input(msg: impl Into<String>) -> Error {
    Error::InvalidInput(msg.into())
}
