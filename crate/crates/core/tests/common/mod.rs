#![allow(dead_code)]

use loga_core::{Clip, Frame, FrameFlag, ModelConfig, ParameterStore};
use loga_tensor::{BnStats, Tensor};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub fn tiny_config() -> ModelConfig {
    ModelConfig {
        clip_len: 4,
        height: 8,
        width: 4,
        channels: 1,
        part_size: 4,
        feature_dim: 6,
        num_classes: 3,
        attention_scale: false,
    }
}

pub fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.gen_range(-1.0..1.0))
}

pub fn random_clip(rng: &mut ChaCha8Rng, cfg: &ModelConfig, id: usize, identity: usize) -> Clip {
    let n = cfg.height * cfg.width * cfg.channels;
    let frames = (0..cfg.clip_len)
        .map(|_| Frame::new(cfg.height, cfg.width, cfg.channels, (0..n).map(|_| rng.gen()).collect()))
        .collect();
    Clip {
        id,
        tracklet: id,
        identity,
        camera: 0,
        frames,
        flags: vec![FrameFlag::Clean; cfg.clip_len],
    }
}

/// Fresh parameters with a random fusion layer and non-trivial running
/// statistics.
pub fn random_store(rng: &mut ChaCha8Rng, cfg: &ModelConfig) -> ParameterStore<f64> {
    let mut store = ParameterStore::init(cfg, rng).unwrap();
    store.randomize_fusion(rng).unwrap();
    let d = cfg.feature_dim;
    for layer in ["gcq.query.bn", "gcq.key.bn", "gcq.value.bn"] {
        let stats = BnStats {
            mean: Tensor::from_fn([d], |_| rng.gen_range(-0.5..0.5)),
            var: Tensor::from_fn([d], |_| rng.gen_range(0.5..1.5)),
        };
        store.insert_running(layer, stats);
    }
    store
}

/// `scale·(x − mean)/√(var + eps) + shift`, row by row, on a row-major `[D×N]`.
pub fn bn_eval_oracle(x: &[f64], d: usize, store: &ParameterStore<f64>, layer: &str) -> Vec<f64> {
    let n = x.len() / d;
    let stats = store.running(&format!("{layer}.bn")).unwrap();
    let scale = store.get(&format!("{layer}.bn.scale")).unwrap();
    let shift = store.get(&format!("{layer}.bn.shift")).unwrap();
    let mut out = vec![0.0; x.len()];
    for r in 0..d {
        let denom = (stats.var.data()[r] + 1e-5).sqrt();
        for c in 0..n {
            out[r * n + c] =
                scale.data()[r] * (x[r * n + c] - stats.mean.data()[r]) / denom + shift.data()[r];
        }
    }
    out
}

pub fn matvec(w: &Tensor<f64>, x: &[f64], n: usize) -> Vec<f64> {
    let (rows, inner) = (w.shape()[0], w.shape()[1]);
    let mut out = vec![0.0; rows * n];
    for i in 0..rows {
        for j in 0..n {
            for k in 0..inner {
                out[i * n + j] += w.data()[i * inner + k] * x[k * n + j];
            }
        }
    }
    out
}

pub fn softmax_oracle(x: &[f64]) -> Vec<f64> {
    let total: f64 = x.iter().map(|v| v.exp()).sum();
    x.iter().map(|v| v.exp() / total).collect()
}
