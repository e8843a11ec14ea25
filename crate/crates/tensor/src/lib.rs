//! Minimal dense tensors and a tape-based reverse-mode autodiff graph.
//!
//! The crate covers exactly the operations needed by the tracklet
//! assembling model: linear maps, 1D/2D cross-correlation, batch
//! normalization, softmax, pooling, distances and losses. There is no
//! general broadcasting; every op documents the shapes it accepts.

mod element;
mod error;
pub mod check;
pub mod graph;
pub mod kernels;
mod tensor;

pub use element::{DType, Element};
pub use error::{Result, TensorError};
pub use graph::{BatchNormMode, BnStats, FaultSite, Graph, Var};
pub use tensor::Tensor;
