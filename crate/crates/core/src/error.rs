use thiserror::Error;

/// Errors produced by diagnostics and model operations.
#[derive(Debug, Error)]
pub enum Error {
    #[error("unknown variable `{0}`")]
    UnknownVariable(String),

    #[error("draws contain non-finite values; diagnostics refuse censored input")]
    NonFiniteDraws,

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("zero within-chain variance")]
    ZeroWithinChainVariance,

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("fit failed: {0}")]
    FitFailure(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("parse error in {path}: {message}")]
    Parse { path: String, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub fn degenerate(msg: impl Into<String>) -> Self {
        Error::Degenerate(msg.into())
    }

    pub fn numerical(msg: impl Into<String>) -> Self {
        Error::Numerical(msg.into())
    }
}
