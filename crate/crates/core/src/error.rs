use std::io;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("dimension error: {0}")]
    Dimension(String),

    #[error("simulation diverged at step {step}")]
    SimulationDiverged { step: usize },

    #[error("bad magic bytes: expected {expected:?}, found {found:?}")]
    BadMagic { expected: [u8; 4], found: [u8; 4] },

    #[error("unsupported format version {0}")]
    UnsupportedVersion(u32),

    #[error("truncated payload: {0}")]
    Truncated(String),

    #[error("non-finite value in file at element {0}")]
    NonFiniteData(usize),

    #[error("gradient check failed: {0}")]
    CheckFailed(String),

    #[error("psnr undefined: mean squared error is zero")]
    UndefinedPsnr,

    #[error("training diverged at epoch {epoch}, batch {batch}: {detail}")]
    TrainingDiverged { epoch: usize, batch: usize, detail: String },

    #[error("checkpoint config digest does not match the loaded configuration")]
    DigestMismatch,

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error(transparent)]
    Io(#[from] io::Error),
}

impl Error {
    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn dim(msg: impl Into<String>) -> Self {
        Error::Dimension(msg.into())
    }
}
