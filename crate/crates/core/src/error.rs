use std::io;
use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("{path}: cannot decode PNG: {reason}")]
    Decode { path: PathBuf, reason: String },
    #[error("{path}: unsupported bit depth {depth} (expected 8 or 16)")]
    UnsupportedBitDepth { path: PathBuf, depth: u8 },
    #[error("{path}: unsupported color type {color}")]
    UnsupportedColorType { path: PathBuf, color: String },
    #[error("{path}: cannot encode PNG: {reason}")]
    Encode { path: PathBuf, reason: String },
    #[error("invalid image: {0}")]
    InvalidImage(String),
    #[error("invalid tensor: {0}")]
    InvalidTensor(String),
    #[error("shape mismatch: {left:?} vs {right:?}")]
    ShapeMismatch {
        left: (usize, usize, usize),
        right: (usize, usize, usize),
    },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("non-finite value encountered: {0}")]
    NonFinite(String),
    #[error("empty CATI: every selected low-variance patch has non-positive mean")]
    EmptyCati,
    #[error("empty dataset: {0}")]
    EmptyDataset(String),
    #[error("noise bank is empty")]
    EmptyBank,
    #[error("{path}: malformed tensor file: {reason}")]
    TensorFormat { path: PathBuf, reason: String },
    #[error("{path}: {reason}")]
    Manifest { path: PathBuf, reason: String },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
