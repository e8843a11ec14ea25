use std::io;
use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("manifest: {0}")]
    Manifest(String),
    #[error("invalid dataset: {0}")]
    Validation(String),
    #[error("{what} version {found} is not supported (expected {supported})")]
    Version {
        what: String,
        found: u32,
        supported: u32,
    },
    #[error("checksum mismatch in chunk {chunk}")]
    Checksum { chunk: String },
    #[error("chunk {chunk} is truncated: {detail}")]
    Truncated { chunk: String, detail: String },
    #[error("chunk {chunk} is malformed: {detail}")]
    Malformed { chunk: String, detail: String },
    #[error("sampler: {0}")]
    Sampler(String),
}

impl DataError {
    pub(crate) fn io(path: impl Into<PathBuf>) -> impl FnOnce(io::Error) -> Self {
        let path = path.into();
        move |source| DataError::Io { path, source }
    }
}

pub type Result<T> = std::result::Result<T, DataError>;
