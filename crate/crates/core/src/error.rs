use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("invalid interval: near {near} must be below far {far}")]
    InvalidInterval { near: f64, far: f64 },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("non-finite value in part {part}: {what}")]
    NonFinitePart { part: usize, what: String },

    #[error("non-finite value at pixel ({row}, {col}): {what}")]
    NonFinitePixel { row: usize, col: usize, what: String },

    #[error("non-finite value: {0}")]
    Numeric(String),

    #[error("training diverged at step {step}: {detail}")]
    Diverged { step: u64, detail: String },

    #[error("format error: {0}")]
    Format(String),

    #[error("version mismatch: expected {expected}, found {found}")]
    Version { expected: u32, found: u32 },

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] io::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub(crate) fn format(msg: impl Into<String>) -> Self {
        Error::Format(msg.into())
    }
}
