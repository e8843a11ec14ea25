//! Tracklet representation learning by local-global associative assembling.
//!
//! A clip of `L` frames is scored twice: once by how well each frame's
//! spatial parts align with the other frames (the local branch, run on raw
//! pixels), and once by how well each frame's holistic embedding correlates
//! with a prototype assembled from the local scores (the global branch).
//! The descriptor is the prototype plus a learned residual of the globally
//! assembled features.
//!
//! Assembling variants live behind [`strategy::AssemblyStrategy`] and are
//! looked up by name in a [`strategy::StrategyRegistry`].

pub mod assembler;
pub mod clip;
pub mod config;
pub mod encoder;
pub mod gradcheck;
mod error;
pub mod model;
pub mod objectives;
pub mod params;
pub mod session;
pub mod strategy;

pub use clip::{Clip, Frame, FrameFlag};
pub use config::ModelConfig;
pub use error::{CoreError, Result};
pub use loga_tensor::BatchNormMode as Mode;
pub use model::{ClipOutput, LogaModel};
pub use params::ParameterStore;
pub use session::Session;
pub use strategy::{AssemblyStrategy, StrategyRegistry};
