//! Synthetic noisy-tracklet benchmark.
//!
//! Each identity is a procedural template of horizontal body-part bands.
//! Tracklets view a template through a camera-specific brightness and
//! contrast, with per-tracklet intensity jitter and per-pixel noise. Each
//! frame then receives at most one corruption (occlusion, misalignment or
//! a switch to another identity), recorded as the frame's flag.
//!
//! Datasets are stored as a TOML manifest plus checksummed binary chunks;
//! see [`container`] for the byte layout.

pub mod container;
pub mod dataset;
mod error;
pub mod generate;
pub mod manifest;
pub mod render;
pub mod sampler;

pub use container::{load_dataset, write_dataset, DatasetReader};
pub use dataset::{Dataset, TrackletView};
pub use error::{DataError, Result};
pub use generate::{generate, split_into_clips, Tracklet};
pub use manifest::{ClipRecord, DatasetManifest, NoiseSpec, Split};
pub use render::{IdentityTemplate, Renderer};
pub use sampler::{PkSampler, SamplerState};

/// Generates the dataset described by `manifest` and writes it to `dir`.
pub fn generate_dataset(manifest: &DatasetManifest, dir: &std::path::Path) -> Result<Dataset> {
    let dataset = generate(manifest)?;
    write_dataset(dir, &dataset)?;
    Ok(dataset)
}
