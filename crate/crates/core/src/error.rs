use thiserror::Error;

/// Errors raised across the simulator, trainer and pipeline.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("degenerate geometry: {0}")]
    DegenerateGeometry(String),

    #[error("protocol violation: {0}")]
    ProtocolViolation(String),

    #[error("training diverged at update {update}: {detail}")]
    TrainingDivergence { update: usize, detail: String },

    #[error("no path to goal from {0}")]
    NoPath(String),

    #[error("no candidates to select from")]
    NoCandidates,

    #[error("format error: {0}")]
    Format(String),

    #[error("io error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}
