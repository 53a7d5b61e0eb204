use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("basis mismatch: {0}")]
    BasisMismatch(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("config: {0}")]
    Config(String),

    #[error("input state is not normalized (|alpha|^2 + |beta|^2 = {0})")]
    Unnormalized(f64),

    #[error("fit failed: {0}")]
    FitFailure(String),

    #[error("visibility undefined: {0}")]
    UndefinedVisibility(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidInput(msg.into())
}
