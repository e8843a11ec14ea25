//! Training, checkpoints and retrieval evaluation for the tracklet
//! assembling model, plus the pieces behind the `loga` command line.

pub mod ablate;
pub mod checkpoint;
pub mod config;
mod error;
pub mod eval;
pub mod inspect;
pub mod optim;
pub mod train;

pub use checkpoint::Checkpoint;
pub use config::TrainConfig;
pub use error::{HarnessError, Result};
pub use eval::{evaluate, evaluate_entries, extract_descriptor, Entry, EvalResult};
pub use optim::AdamW;
pub use train::{train, StepLog, TrainOutcome, Trainer};
