//! In-memory dataset with split and tracklet lookups.

use std::collections::BTreeMap;

use loga_core::Clip;

use crate::error::{DataError, Result};
use crate::manifest::{ClipRecord, DatasetManifest, Split};

/// Clips of one tracklet within a split, in clip order.
#[derive(Debug, Clone)]
pub struct TrackletView<'d> {
    pub tracklet: usize,
    pub identity: usize,
    pub camera: usize,
    pub clips: Vec<&'d Clip>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    manifest: DatasetManifest,
    clips: Vec<Clip>,
}

impl Dataset {
    /// Pairs an indexed manifest with its clips, checking that they agree.
    pub fn new(manifest: DatasetManifest, clips: Vec<Clip>) -> Result<Self> {
        if manifest.clips.len() != clips.len() {
            return Err(DataError::Validation(format!(
                "{} index records for {} clips",
                manifest.clips.len(),
                clips.len()
            )));
        }
        for (r, c) in manifest.clips.iter().zip(&clips) {
            let same = r.id == c.id && r.tracklet == c.tracklet && r.identity == c.identity && r.camera == c.camera;
            if !same || r.frame_flags()? != c.flags {
                return Err(DataError::Validation(format!("clip {} disagrees with its index record", c.id)));
            }
        }
        Ok(Self { manifest, clips })
    }

    pub fn manifest(&self) -> &DatasetManifest {
        &self.manifest
    }

    pub fn clips(&self) -> &[Clip] {
        &self.clips
    }

    pub fn record(&self, id: usize) -> Option<&ClipRecord> {
        self.manifest.clips.get(id)
    }

    pub fn clip(&self, id: usize) -> Option<&Clip> {
        self.clips.get(id)
    }

    pub fn split(&self, split: Split) -> Vec<&Clip> {
        self.manifest
            .clips
            .iter()
            .zip(&self.clips)
            .filter(|(r, _)| r.split == split)
            .map(|(_, c)| c)
            .collect()
    }

    /// Tracklets of a split, ordered by tracklet id.
    pub fn tracklets(&self, split: Split) -> Vec<TrackletView<'_>> {
        let mut by_id: BTreeMap<usize, TrackletView<'_>> = BTreeMap::new();
        for c in self.split(split) {
            by_id
                .entry(c.tracklet)
                .or_insert_with(|| TrackletView {
                    tracklet: c.tracklet,
                    identity: c.identity,
                    camera: c.camera,
                    clips: Vec::new(),
                })
                .clips
                .push(c);
        }
        by_id.into_values().collect()
    }

    /// Dense class indices for the identities of the training split, in
    /// ascending identity order.
    pub fn train_classes(&self) -> BTreeMap<usize, usize> {
        let mut ids: Vec<usize> = self.split(Split::Train).iter().map(|c| c.identity).collect();
        ids.sort_unstable();
        ids.dedup();
        ids.into_iter().enumerate().map(|(k, id)| (id, k)).collect()
    }
}
