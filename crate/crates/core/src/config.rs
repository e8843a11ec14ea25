use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};

/// Channel widths of the two encoder convolutions.
pub const ENCODER_WIDTHS: [usize; 2] = [8, 16];

/// Shapes of the assembling model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Frames per clip (`L`).
    pub clip_len: usize,
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    /// Width and stride of the part convolution (`S`).
    pub part_size: usize,
    /// Embedding dimension (`D`).
    pub feature_dim: usize,
    /// Number of training identities (`C`).
    pub num_classes: usize,
    /// Divide query/key correlations by `sqrt(D)` before the softmax.
    #[serde(default)]
    pub attention_scale: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            clip_len: 10,
            height: 32,
            width: 16,
            channels: 1,
            part_size: 10,
            feature_dim: 64,
            num_classes: 16,
            attention_scale: false,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("clip_len", self.clip_len),
            ("height", self.height),
            ("width", self.width),
            ("channels", self.channels),
            ("part_size", self.part_size),
            ("feature_dim", self.feature_dim),
            ("num_classes", self.num_classes),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(CoreError::Config(format!("{name} must be positive")));
        }
        if !matches!(self.channels, 1 | 3) {
            return Err(CoreError::Config(format!(
                "frames must have 1 or 3 channels, got {}",
                self.channels
            )));
        }
        if self.pixels_per_frame() < self.part_size {
            return Err(CoreError::Config(format!(
                "part size {} exceeds the {}x{} frame",
                self.part_size, self.height, self.width
            )));
        }
        Ok(())
    }

    pub fn pixels_per_frame(&self) -> usize {
        self.height * self.width
    }

    /// Number of non-overlapping parts per frame (`M`); a trailing
    /// remainder shorter than `S` is dropped.
    pub fn num_parts(&self) -> usize {
        self.pixels_per_frame() / self.part_size
    }
}
