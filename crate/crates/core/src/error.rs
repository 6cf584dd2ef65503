use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("attention over an empty key/memory set")]
    EmptyMemory,

    #[error("no labeled evidence: no scribbled pixel and no previous mask")]
    EmptyEvidence,

    #[error("object capacity exceeded: {requested} objects requested, capacity is {capacity}")]
    Capacity { requested: usize, capacity: usize },

    #[error("memory cap exceeded: {entries} entries, cap is {cap}")]
    MemoryCap { entries: usize, cap: usize },

    #[error("precondition failed: {0}")]
    Precondition(String),

    #[error("conflict: {0}")]
    Conflict(String),

    #[error("format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    /// Stable machine-readable tag, used by the CLI error line and the HTTP layer.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::InvalidArgument(_) => "invalid_argument",
            Error::EmptyMemory => "empty_memory",
            Error::EmptyEvidence => "empty_evidence",
            Error::Capacity { .. } => "capacity",
            Error::MemoryCap { .. } => "memory_cap",
            Error::Precondition(_) => "precondition",
            Error::Conflict(_) => "conflict",
            Error::Format(_) => "format",
            Error::Io(_) => "io",
        }
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Format(e.to_string())
    }
}

impl From<png::DecodingError> for Error {
    fn from(e: png::DecodingError) -> Self {
        Error::Format(format!("png decode: {e}"))
    }
}

impl From<png::EncodingError> for Error {
    fn from(e: png::EncodingError) -> Self {
        Error::Format(format!("png encode: {e}"))
    }
}
