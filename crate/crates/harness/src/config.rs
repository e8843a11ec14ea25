//! Training settings, read from TOML.

use std::path::Path;

use loga_core::objectives::Mining;
use loga_core::ModelConfig;
use loga_datagen::DatasetManifest;
use serde::{Deserialize, Serialize};

use crate::error::{HarnessError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub weight_decay: f64,
    /// Learning-rate multiplier applied every `decay_every` epochs.
    pub lr_decay: f64,
    pub decay_every: usize,
    pub epochs: usize,
    pub margin: f64,
    /// Identities per batch.
    pub p: usize,
    /// Clips per identity in a batch.
    pub k: usize,
    /// Width and stride of the part convolution.
    pub part_size: usize,
    pub feature_dim: usize,
    pub strategy: String,
    pub mining: Mining,
    pub attention_scale: bool,
    pub seed: u64,
    /// Write an intermediate checkpoint every this many epochs (0: never).
    pub checkpoint_every: usize,
    /// Stop after this many optimizer steps, regardless of `epochs`.
    pub max_steps: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 3e-4,
            weight_decay: 5e-4,
            lr_decay: 0.1,
            decay_every: 60,
            epochs: 30,
            margin: 0.3,
            p: 4,
            k: 8,
            part_size: 10,
            feature_dim: 64,
            strategy: "associative".into(),
            mining: Mining::Random,
            attention_scale: false,
            seed: 0,
            checkpoint_every: 0,
            max_steps: None,
        }
    }
}

impl TrainConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let c: Self = toml::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))?;
        c.validate()?;
        Ok(c)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(HarnessError::io(path))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(HarnessError::Config(msg));
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning_rate {} must be non-negative", self.learning_rate));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return bad(format!("weight_decay {} must be non-negative", self.weight_decay));
        }
        if !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return bad(format!("lr_decay {} must be in (0, 1]", self.lr_decay));
        }
        if !(self.margin >= 0.0 && self.margin.is_finite()) {
            return bad(format!("margin {} must be non-negative", self.margin));
        }
        for (name, v) in [
            ("decay_every", self.decay_every),
            ("p", self.p),
            ("k", self.k),
            ("part_size", self.part_size),
            ("feature_dim", self.feature_dim),
        ] {
            if v == 0 {
                return bad(format!("{name} must be positive"));
            }
        }
        Ok(())
    }

    /// Learning rate during 0-based `epoch`.
    pub fn lr_at(&self, epoch: usize) -> f64 {
        self.learning_rate * self.lr_decay.powi((epoch / self.decay_every) as i32)
    }

    /// Model shapes for a dataset: frame geometry and clip length come from
    /// the manifest, the class count from the training identities.
    pub fn model_config(&self, manifest: &DatasetManifest, num_classes: usize) -> ModelConfig {
        ModelConfig {
            clip_len: manifest.clip_len,
            height: manifest.height,
            width: manifest.width,
            channels: manifest.channels,
            part_size: self.part_size,
            feature_dim: self.feature_dim,
            num_classes,
            attention_scale: self.attention_scale,
        }
    }
}
