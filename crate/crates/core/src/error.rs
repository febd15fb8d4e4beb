use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape error: {0}")]
    Shape(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error(transparent)]
    Weights(#[from] WeightFileError),

    #[error("i/o error: {0}")]
    Io(#[from] io::Error),

    #[error("format error: {0}")]
    Format(String),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("non-finite loss: {0}")]
    Diverged(String),
}

/// Failure modes of the binary weight file.
#[derive(Debug, Error)]
pub enum WeightFileError {
    #[error("bad magic {found:?}, expected \"LGMW\"")]
    BadMagic { found: [u8; 4] },

    #[error("unsupported weight format version {0}")]
    UnsupportedVersion(u32),

    #[error("weight file truncated while reading {context}")]
    Truncated { context: String },

    #[error("weight file has {0} trailing bytes")]
    TrailingBytes(usize),

    #[error("tensor name is not valid UTF-8")]
    InvalidName,

    #[error("duplicate tensor name {0:?}")]
    DuplicateName(String),

    #[error("weights do not match the model: {}", offenders.join("; "))]
    Conflict { offenders: Vec<String> },
}

pub(crate) fn shape_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Shape(msg.into()))
}
