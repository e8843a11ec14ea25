//! Generator settings and the dataset index, stored as TOML.

use std::fmt;
use std::path::Path;

use loga_core::FrameFlag;
use serde::{Deserialize, Serialize};

use crate::error::{DataError, Result};

/// Manifest and chunk format version written by this crate.
pub const FORMAT_VERSION: u32 = 1;

/// File name of the manifest inside a dataset directory.
pub const MANIFEST_FILE: &str = "manifest.toml";

/// Per-frame corruption and appearance variation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseSpec {
    pub p_occlude: f64,
    pub p_misalign: f64,
    pub p_idswitch: f64,
    /// Largest misalignment shift along either axis, in pixels.
    pub max_shift: usize,
    /// Occluder side length range, in pixels (clamped to the frame).
    pub occluder_min: usize,
    pub occluder_max: usize,
    /// Brightness offset of the extreme cameras; others are interpolated.
    pub brightness_delta: f64,
    /// Contrast change of the extreme cameras; others are interpolated.
    pub contrast_delta: f64,
    /// Standard deviation of per-pixel noise on every frame.
    pub pixel_noise: f64,
    /// Standard deviation of the per-tracklet, per-band intensity jitter.
    pub tracklet_jitter: f64,
}

impl Default for NoiseSpec {
    fn default() -> Self {
        Self {
            p_occlude: 0.1,
            p_misalign: 0.1,
            p_idswitch: 0.1,
            max_shift: 4,
            occluder_min: 6,
            occluder_max: 14,
            brightness_delta: 0.1,
            contrast_delta: 0.15,
            pixel_noise: 0.05,
            tracklet_jitter: 0.05,
        }
    }
}

impl NoiseSpec {
    /// No corruption and no appearance variation beyond the camera.
    pub fn clean() -> Self {
        Self {
            p_occlude: 0.0,
            p_misalign: 0.0,
            p_idswitch: 0.0,
            pixel_noise: 0.0,
            tracklet_jitter: 0.0,
            ..Self::default()
        }
    }

    fn validate(&self) -> Result<()> {
        for (name, p) in [
            ("p_occlude", self.p_occlude),
            ("p_misalign", self.p_misalign),
            ("p_idswitch", self.p_idswitch),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(DataError::Validation(format!("{name} = {p} is not a probability")));
            }
        }
        let total = self.p_occlude + self.p_misalign + self.p_idswitch;
        if total > 1.0 + 1e-12 {
            return Err(DataError::Validation(format!(
                "corruption probabilities sum to {total} > 1"
            )));
        }
        if self.occluder_min == 0 || self.occluder_min > self.occluder_max {
            return Err(DataError::Validation(format!(
                "occluder size range {}..={} is empty",
                self.occluder_min, self.occluder_max
            )));
        }
        for (name, v) in [
            ("brightness_delta", self.brightness_delta),
            ("contrast_delta", self.contrast_delta),
            ("pixel_noise", self.pixel_noise),
            ("tracklet_jitter", self.tracklet_jitter),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(DataError::Validation(format!("{name} = {v} must be non-negative")));
            }
        }
        if self.contrast_delta >= 1.0 {
            return Err(DataError::Validation("contrast_delta must be below 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Query,
    Gallery,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Query => "query",
            Split::Gallery => "gallery",
        })
    }
}

/// Index entry of one generated clip.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClipRecord {
    pub id: usize,
    pub tracklet: usize,
    pub identity: usize,
    pub camera: usize,
    pub split: Split,
    /// One flag code per frame: `c` clean, `o` occluded, `m` misaligned,
    /// `s` identity switch.
    pub flags: String,
}

impl ClipRecord {
    pub fn frame_flags(&self) -> Result<Vec<FrameFlag>> {
        self.flags
            .chars()
            .map(|c| {
                FrameFlag::from_code(c).ok_or_else(|| {
                    DataError::Manifest(format!("clip {}: unknown flag code `{c}`", self.id))
                })
            })
            .collect()
    }
}

/// Generator settings; after generation also the index of every clip.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetManifest {
    pub version: u32,
    pub seed: u64,
    pub num_identities: usize,
    /// Identities `0..train_identities` train; the rest are query/gallery.
    pub train_identities: usize,
    pub tracklets_per_identity: usize,
    pub frames_per_tracklet: usize,
    pub clip_len: usize,
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub cameras: usize,
    /// Horizontal body-part bands of each identity template.
    pub body_bands: usize,
    /// Clips per chunk file (the last chunk may hold fewer).
    pub clips_per_chunk: usize,
    pub noise: NoiseSpec,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub clips: Vec<ClipRecord>,
}

impl Default for DatasetManifest {
    fn default() -> Self {
        Self {
            version: FORMAT_VERSION,
            seed: 0,
            num_identities: 32,
            train_identities: 16,
            tracklets_per_identity: 8,
            frames_per_tracklet: 40,
            clip_len: 10,
            height: 32,
            width: 16,
            channels: 1,
            cameras: 2,
            body_bands: 4,
            clips_per_chunk: 64,
            noise: NoiseSpec::default(),
            clips: Vec::new(),
        }
    }
}

impl DatasetManifest {
    pub fn from_toml(text: &str) -> Result<Self> {
        // the version is checked before the rest so that future formats
        // fail with a version error, not a schema error
        #[derive(Deserialize)]
        struct Probe {
            version: Option<u32>,
        }
        let probe: Probe = toml::from_str(text).map_err(|e| DataError::Manifest(e.to_string()))?;
        if let Some(found) = probe.version {
            if found != FORMAT_VERSION {
                return Err(DataError::Version {
                    what: "manifest".into(),
                    found,
                    supported: FORMAT_VERSION,
                });
            }
        }
        toml::from_str(text).map_err(|e| DataError::Manifest(e.to_string()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("manifest serializes")
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(DataError::io(path))?;
        Self::from_toml(&text)
    }

    pub fn frame_len(&self) -> usize {
        self.channels * self.height * self.width
    }

    pub fn clips_per_tracklet(&self) -> usize {
        self.frames_per_tracklet.div_ceil(self.clip_len)
    }

    pub fn num_tracklets(&self) -> usize {
        self.num_identities * self.tracklets_per_identity
    }

    pub fn num_clips(&self) -> usize {
        self.num_tracklets() * self.clips_per_tracklet()
    }

    /// Tracklet `t` of an identity is seen by camera `t mod cameras`.
    pub fn camera_of(&self, tracklet_index: usize) -> usize {
        tracklet_index % self.cameras
    }

    /// Training identities keep all tracklets for training. For test
    /// identities the first tracklet of each camera is a query and the
    /// rest form the gallery.
    pub fn split_of(&self, identity: usize, tracklet_index: usize) -> Split {
        if identity < self.train_identities {
            Split::Train
        } else if tracklet_index < self.cameras {
            Split::Query
        } else {
            Split::Gallery
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.version != FORMAT_VERSION {
            return Err(DataError::Version {
                what: "manifest".into(),
                found: self.version,
                supported: FORMAT_VERSION,
            });
        }
        let positive = [
            ("num_identities", self.num_identities),
            ("tracklets_per_identity", self.tracklets_per_identity),
            ("frames_per_tracklet", self.frames_per_tracklet),
            ("clip_len", self.clip_len),
            ("height", self.height),
            ("width", self.width),
            ("cameras", self.cameras),
            ("body_bands", self.body_bands),
            ("clips_per_chunk", self.clips_per_chunk),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(DataError::Validation(format!("{name} must be positive")));
        }
        if !matches!(self.channels, 1 | 3) {
            return Err(DataError::Validation(format!("channels must be 1 or 3, got {}", self.channels)));
        }
        if self.body_bands > self.height {
            return Err(DataError::Validation(format!(
                "{} body bands do not fit {} rows",
                self.body_bands, self.height
            )));
        }
        if self.train_identities > self.num_identities {
            return Err(DataError::Validation(format!(
                "{} training identities out of {}",
                self.train_identities, self.num_identities
            )));
        }
        if self.noise.p_idswitch > 0.0 && self.num_identities < 2 {
            return Err(DataError::Validation("identity switches need at least 2 identities".into()));
        }
        self.noise.validate()?;
        if self.train_identities < self.num_identities {
            // each query needs a gallery tracklet of its identity under
            // another camera
            if self.cameras < 2 {
                return Err(DataError::Validation(
                    "test identities need at least 2 cameras for cross-camera matches".into(),
                ));
            }
            // two consecutive gallery tracklets cover two cameras, so
            // every query camera has a match under another one
            if self.tracklets_per_identity < self.cameras + 2 {
                return Err(DataError::Validation(format!(
                    "{} tracklets per identity: need the {} query tracklets plus at least 2 gallery tracklets",
                    self.tracklets_per_identity, self.cameras
                )));
            }
        }
        if !self.clips.is_empty() {
            self.validate_index()?;
        }
        Ok(())
    }

    /// Checks the clip index: counts, flag lengths and that every query
    /// identity has a gallery clip under a different camera.
    fn validate_index(&self) -> Result<()> {
        if self.clips.len() != self.num_clips() {
            return Err(DataError::Validation(format!(
                "index lists {} clips, settings imply {}",
                self.clips.len(),
                self.num_clips()
            )));
        }
        for (i, c) in self.clips.iter().enumerate() {
            if c.id != i {
                return Err(DataError::Validation(format!("clip at position {i} has id {}", c.id)));
            }
            if c.flags.chars().count() != self.clip_len {
                return Err(DataError::Validation(format!(
                    "clip {} has {} flags for {} frames",
                    c.id,
                    c.flags.chars().count(),
                    self.clip_len
                )));
            }
            c.frame_flags()?;
        }
        for q in self.clips.iter().filter(|c| c.split == Split::Query) {
            let matched = self
                .clips
                .iter()
                .any(|g| g.split == Split::Gallery && g.identity == q.identity && g.camera != q.camera);
            if !matched {
                return Err(DataError::Validation(format!(
                    "query identity {} (camera {}) has no gallery clip under another camera",
                    q.identity, q.camera
                )));
            }
        }
        Ok(())
    }
}
