use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    /// An argument violated a precondition (non-unit quaternion, empty trace, ...).
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// A frame arrived with a sequence number at or behind the stream position.
    #[error("ordering violation: {0}")]
    Ordering(String),

    /// Wire payload could not be decoded.
    #[error("decode error: {0}")]
    Decode(String),

    /// Trace or config file carries an unsupported version tag.
    #[error("unsupported format version {found} (expected {expected})")]
    Version { found: u8, expected: u8 },

    /// Trace or config file is structurally broken.
    #[error("format error: {0}")]
    Format(String),

    /// Caller lacks the player type required for the operation.
    #[error("permission denied: {0}")]
    Permission(String),

    /// Requested experience transition does not exist from the current state.
    #[error("invalid transition: {0}")]
    Transition(String),

    /// Operation requires a session state that does not hold (no open ballot, ...).
    #[error("state error: {0}")]
    State(String),

    /// A connection attempt was rejected.
    #[error("connection rejected: {0}")]
    Rejected(String),

    /// Latency measurement had no matched frames to aggregate.
    #[error("measurement error: {0}")]
    Measurement(String),

    /// Experiment or graph configuration is invalid.
    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
