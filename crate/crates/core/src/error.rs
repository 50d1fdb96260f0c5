use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Bytes on disk do not follow the expected binary or text layout.
    #[error("format error: {0}")]
    Format(String),
    /// Well-formed input that violates a domain invariant.
    #[error("validation error: {0}")]
    Validation(String),
    #[error("training aborted: {0}")]
    Training(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn validation(msg: impl Into<String>) -> Error {
    Error::Validation(msg.into())
}

pub(crate) fn format(msg: impl Into<String>) -> Error {
    Error::Format(msg.into())
}
