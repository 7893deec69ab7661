use thiserror::Error;

/// Errors raised by the compression engine and the harness.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// Input is well-formed but mathematically degenerate (zero norm, zero mass).
    #[error("degenerate input: {0}")]
    Degenerate(String),

    /// Operation called on a cache or score state that was never initialized.
    #[error("state error: {0}")]
    State(String),

    /// The cache violates one of its referential invariants.
    #[error("cache corruption: {0}")]
    Corruption(String),

    #[error("format error at byte {offset}: {message}")]
    Format { offset: u64, message: String },

    #[error("configuration error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}
