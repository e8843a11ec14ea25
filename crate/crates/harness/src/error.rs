use std::io;
use std::path::PathBuf;

use loga_core::CoreError;
use loga_datagen::DataError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Core(#[from] CoreError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("configuration error: {0}")]
    Config(String),
    #[error("non-finite loss at epoch {epoch}, step {step} (batch {batch}: clips {clips:?})")]
    NonFinite {
        epoch: usize,
        step: usize,
        batch: usize,
        clips: Vec<usize>,
    },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("checkpoint version {found} is not supported (expected {supported})")]
    CheckpointVersion { found: u32, supported: u32 },
    #[error("unknown clip id {0}")]
    UnknownClip(usize),
    #[error("empty tracklet {0}")]
    EmptyTracklet(usize),
}

impl HarnessError {
    pub(crate) fn io(path: impl Into<PathBuf>) -> impl FnOnce(io::Error) -> Self {
        let path = path.into();
        move |source| HarnessError::Io { path, source }
    }
}

pub type Result<T> = std::result::Result<T, HarnessError>;
