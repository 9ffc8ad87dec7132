use std::io;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, MtcError>;

#[derive(Debug, Error)]
pub enum MtcError {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("dimension mismatch: {0}")]
    DimMismatch(String),

    #[error("{message} at offset {offset}")]
    Parse { offset: usize, message: String },

    #[error("rate/length mismatch: {0}")]
    RateLength(String),

    #[error("truncated input: expected {expected} bytes, got {actual}")]
    Truncated { expected: usize, actual: usize },

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl MtcError {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        MtcError::InvalidInput(msg.into())
    }

    pub(crate) fn dims(msg: impl Into<String>) -> Self {
        MtcError::DimMismatch(msg.into())
    }

    pub(crate) fn parse(offset: usize, msg: impl Into<String>) -> Self {
        MtcError::Parse {
            offset,
            message: msg.into(),
        }
    }
}
