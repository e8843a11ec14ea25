//! Tracklet generation and clip splitting.

use loga_core::{Clip, Frame, FrameFlag};

use crate::dataset::Dataset;
use crate::error::Result;
use crate::manifest::{ClipRecord, DatasetManifest};
use crate::render::{FrameSite, Renderer};

/// A full-length frame sequence of one identity under one camera.
#[derive(Debug, Clone, PartialEq)]
pub struct Tracklet {
    pub id: usize,
    pub identity: usize,
    pub camera: usize,
    pub frames: Vec<Frame>,
    pub flags: Vec<FrameFlag>,
}

/// Consecutive non-overlapping windows of `clip_len` frames, numbered from
/// `first_id`. A final partial window is completed by repeating its last
/// frame, flag included.
pub fn split_into_clips(tracklet: &Tracklet, clip_len: usize, first_id: usize) -> Vec<Clip> {
    assert!(clip_len > 0, "clip length must be positive");
    tracklet
        .frames
        .chunks(clip_len)
        .zip(tracklet.flags.chunks(clip_len))
        .enumerate()
        .map(|(i, (frames, flags))| {
            let mut frames = frames.to_vec();
            let mut flags = flags.to_vec();
            while frames.len() < clip_len {
                frames.push(frames[frames.len() - 1].clone());
                flags.push(flags[flags.len() - 1]);
            }
            Clip {
                id: first_id + i,
                tracklet: tracklet.id,
                identity: tracklet.identity,
                camera: tracklet.camera,
                frames,
                flags,
            }
        })
        .collect()
}

/// Renders tracklet `t` (global index) of the manifest.
pub fn render_tracklet(renderer: &Renderer<'_>, m: &DatasetManifest, t: usize) -> Tracklet {
    let identity = t / m.tracklets_per_identity;
    let camera = m.camera_of(t % m.tracklets_per_identity);
    let (frames, flags) = (0..m.frames_per_tracklet)
        .map(|frame| {
            renderer.frame(FrameSite {
                tracklet: t,
                identity,
                camera,
                frame,
            })
        })
        .unzip();
    Tracklet {
        id: t,
        identity,
        camera,
        frames,
        flags,
    }
}

/// Generates the whole dataset in memory. The returned manifest carries
/// the clip index.
pub fn generate(manifest: &DatasetManifest) -> Result<Dataset> {
    let mut m = manifest.clone();
    m.clips.clear();
    m.validate()?;
    let renderer = Renderer::new(&m);
    let mut clips = Vec::with_capacity(m.num_clips());
    let mut records = Vec::with_capacity(m.num_clips());
    for t in 0..m.num_tracklets() {
        let tracklet = render_tracklet(&renderer, &m, t);
        let split = m.split_of(tracklet.identity, t % m.tracklets_per_identity);
        for clip in split_into_clips(&tracklet, m.clip_len, clips.len()) {
            records.push(ClipRecord {
                id: clip.id,
                tracklet: clip.tracklet,
                identity: clip.identity,
                camera: clip.camera,
                split,
                flags: clip.flags.iter().map(|f| f.code()).collect(),
            });
            clips.push(clip);
        }
    }
    m.clips = records;
    m.validate()?;
    Dataset::new(m, clips)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tracklet(n: usize) -> Tracklet {
        Tracklet {
            id: 3,
            identity: 1,
            camera: 0,
            frames: (0..n).map(|i| Frame::filled(1, 1, 1, i as f32)).collect(),
            flags: (0..n)
                .map(|i| if i == n - 1 { FrameFlag::Occluded } else { FrameFlag::Clean })
                .collect(),
        }
    }

    #[test]
    fn partial_window_is_padded_with_last_frame() {
        let clips = split_into_clips(&tracklet(25), 10, 7);
        assert_eq!(clips.len(), 3);
        assert_eq!(clips[2].id, 9);
        let last = &clips[2];
        assert_eq!(last.frames.len(), 10);
        for i in 5..10 {
            assert_eq!(last.frames[i].pixels, [24.0]);
            assert_eq!(last.flags[i], FrameFlag::Occluded);
        }
    }

    #[test]
    fn exact_window_is_not_padded() {
        let clips = split_into_clips(&tracklet(10), 10, 0);
        assert_eq!(clips.len(), 1);
        assert_eq!(clips[0].frames[9].pixels, [9.0]);
    }
}
