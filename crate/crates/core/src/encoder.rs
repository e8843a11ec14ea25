//! Per-frame convolutional encoder and the raw-pixel input of the local
//! branch.
//!
//! Architecture: `conv3x3/2 (Cc→8) → ReLU → conv3x3/2 (8→16) → ReLU →
//! global average pool → linear (16→D)`, zero padding 1 on both
//! convolutions. Every frame is encoded independently.

use loga_tensor::{BatchNormMode, Element, Tensor, Var};

use crate::clip::Clip;
use crate::config::ModelConfig;
use crate::error::{CoreError, Result};
use crate::params::{names, ParameterStore};
use crate::session::Session;

fn check_clip(clip: &Clip, config: &ModelConfig) -> Result<()> {
    if clip.frames.len() != config.clip_len {
        return Err(CoreError::Config(format!(
            "clip {} has {} frames, expected {}",
            clip.id,
            clip.frames.len(),
            config.clip_len
        )));
    }
    for f in &clip.frames {
        if (f.height, f.width, f.channels) != (config.height, config.width, config.channels) {
            return Err(CoreError::Config(format!(
                "clip {}: frame is {}x{}x{}, expected {}x{}x{}",
                clip.id, f.height, f.width, f.channels, config.height, config.width, config.channels
            )));
        }
    }
    Ok(())
}

/// Stacks the frames of `clips` into `[N×Cc×H×W]`, clip-major.
pub fn frames_tensor<T: Element>(clips: &[&Clip], config: &ModelConfig) -> Result<Tensor<T>> {
    let mut data = Vec::with_capacity(clips.len() * config.clip_len * config.channels * config.pixels_per_frame());
    for clip in clips {
        check_clip(clip, config)?;
        for f in &clip.frames {
            data.extend(f.pixels.iter().map(|&p| T::cast(p as f64)));
        }
    }
    Ok(Tensor::new(
        [
            clips.len() * config.clip_len,
            config.channels,
            config.height,
            config.width,
        ],
        data,
    )?)
}

/// `[L×(H·W)]`: each frame collapsed to one channel by averaging, then
/// flattened row-major. Row `i` is frame `i`.
pub fn flatten_for_laq<T: Element>(clip: &Clip) -> Result<Tensor<T>> {
    let first = clip
        .frames
        .first()
        .ok_or_else(|| CoreError::Data(format!("clip {} has no frames", clip.id)))?;
    let plane = first.height * first.width;
    let mut data = Vec::with_capacity(clip.frames.len() * plane);
    for f in &clip.frames {
        if f.height * f.width != plane {
            return Err(CoreError::Config(format!("clip {} mixes frame sizes", clip.id)));
        }
        data.extend(f.channel_mean().into_iter().map(|p| T::cast(p as f64)));
    }
    Ok(Tensor::new([clip.frames.len(), plane], data)?)
}

/// Encodes `[N×Cc×H×W]` frames into `[D×N]` embeddings.
pub fn encode<T: Element>(s: &mut Session<'_, T>, frames: Var) -> Result<Var> {
    let w1 = s.param(names::CONV1_W)?;
    let b1 = s.param(names::CONV1_B)?;
    let w2 = s.param(names::CONV2_W)?;
    let b2 = s.param(names::CONV2_B)?;
    let g = &mut s.graph;
    let h = g.conv2d(frames, w1, Some(b1), 2, 1)?;
    let h = g.relu(h);
    let h = g.conv2d(h, w2, Some(b2), 2, 1)?;
    let h = g.relu(h);
    let pooled = g.global_avg_pool(h)?;
    s.linear("encoder.fc", pooled, true)
}

/// Holistic features `E: [D×L]` of one clip; column `i` embeds frame `i`.
pub fn encode_clip<T: Element>(
    clip: &Clip,
    store: &mut ParameterStore<T>,
    config: &ModelConfig,
    mode: BatchNormMode,
) -> Result<Tensor<T>> {
    let frames = frames_tensor(&[clip], config)?;
    let mut s = Session::new(store, mode).with_trainable(false);
    let x = s.constant(frames);
    let e = encode(&mut s, x)?;
    Ok(s.value(e).clone())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clip::{Frame, FrameFlag};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn small_config() -> ModelConfig {
        ModelConfig {
            clip_len: 3,
            height: 8,
            width: 4,
            part_size: 4,
            feature_dim: 6,
            num_classes: 2,
            ..ModelConfig::default()
        }
    }

    fn random_frame(rng: &mut ChaCha8Rng, cfg: &ModelConfig) -> Frame {
        let n = cfg.height * cfg.width * cfg.channels;
        Frame::new(cfg.height, cfg.width, cfg.channels, (0..n).map(|_| rng.gen()).collect())
    }

    fn clip_of(frames: Vec<Frame>) -> Clip {
        let n = frames.len();
        Clip {
            id: 0,
            tracklet: 0,
            identity: 0,
            camera: 0,
            frames,
            flags: vec![FrameFlag::Clean; n],
        }
    }

    #[test]
    fn flatten_is_row_major() {
        let f = Frame::new(2, 2, 1, vec![1., 2., 3., 4.]);
        let t: Tensor<f64> = flatten_for_laq(&clip_of(vec![f])).unwrap();
        assert_eq!(t.shape(), &[1, 4]);
        assert_eq!(t.data(), &[1., 2., 3., 4.]);
    }

    #[test]
    fn flatten_averages_equal_channels_to_constant() {
        let f = Frame::filled(2, 3, 3, 0.25);
        let t: Tensor<f64> = flatten_for_laq(&clip_of(vec![f])).unwrap();
        assert!(t.data().iter().all(|&v| v == 0.25));
    }

    #[test]
    fn identical_frames_give_identical_columns() {
        let cfg = small_config();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut store = ParameterStore::<f64>::init(&cfg, &mut rng).unwrap();
        let f = random_frame(&mut rng, &cfg);
        let g = random_frame(&mut rng, &cfg);
        let e = encode_clip(&clip_of(vec![f.clone(), g, f]), &mut store, &cfg, BatchNormMode::Eval).unwrap();
        assert_eq!(e.shape(), &[6, 3]);
        assert_eq!(e.column(0), e.column(2));
        assert_ne!(e.column(0), e.column(1));
    }

    #[test]
    fn permuting_frames_permutes_columns() {
        let cfg = small_config();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut store = ParameterStore::<f64>::init(&cfg, &mut rng).unwrap();
        let frames: Vec<Frame> = (0..3).map(|_| random_frame(&mut rng, &cfg)).collect();
        let e = encode_clip(&clip_of(frames.clone()), &mut store, &cfg, BatchNormMode::Eval).unwrap();
        let perm = [2, 0, 1];
        let permuted: Vec<Frame> = perm.iter().map(|&i| frames[i].clone()).collect();
        let ep = encode_clip(&clip_of(permuted), &mut store, &cfg, BatchNormMode::Eval).unwrap();
        for (j, &i) in perm.iter().enumerate() {
            assert_eq!(ep.column(j), e.column(i));
        }
    }

    #[test]
    fn wrong_frame_size_is_a_config_error() {
        let cfg = small_config();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut store = ParameterStore::<f32>::init(&cfg, &mut rng).unwrap();
        let frames = vec![Frame::filled(4, 4, 1, 0.0); 3];
        let err = encode_clip(&clip_of(frames), &mut store, &cfg, BatchNormMode::Eval).unwrap_err();
        assert!(matches!(err, CoreError::Config(_)));
    }
}
