use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid graph: {0}")]
    InvalidGraph(String),
    #[error("unknown vertex `{0}`")]
    UnknownVertex(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("enumeration too large: {0}")]
    TooLarge(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("sampler did not converge after {attempts} attempts: {what}")]
    Rejection { what: String, attempts: u64 },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidParameter(msg.into())
}
