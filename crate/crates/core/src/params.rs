//! Named parameter tensors and batch-norm running statistics.

use indexmap::IndexMap;
use loga_tensor::{BnStats, Element, Tensor};
use rand::Rng;

use crate::config::{ModelConfig, ENCODER_WIDTHS};
use crate::error::{CoreError, Result};

pub mod names {
    pub const CONV1_W: &str = "encoder.conv1.weight";
    pub const CONV1_B: &str = "encoder.conv1.bias";
    pub const CONV2_W: &str = "encoder.conv2.weight";
    pub const CONV2_B: &str = "encoder.conv2.bias";
    pub const ENC_FC_W: &str = "encoder.fc.weight";
    pub const ENC_FC_B: &str = "encoder.fc.bias";
    pub const LAQ_KERNEL: &str = "laq.kernel";
    pub const LAQ_MLP_W: &str = "laq.mlp.weight";
    pub const LAQ_MLP_B: &str = "laq.mlp.bias";
    pub const QUERY: &str = "gcq.query";
    pub const KEY: &str = "gcq.key";
    pub const VALUE: &str = "gcq.value";
    pub const FUSION_W: &str = "gcq.fusion.weight";
    pub const FUSION_B: &str = "gcq.fusion.bias";
    pub const CLS_W: &str = "classifier.weight";
    pub const CLS_B: &str = "classifier.bias";

    pub fn weight(layer: &str) -> String {
        format!("{layer}.weight")
    }

    pub fn bn(layer: &str) -> String {
        format!("{layer}.bn")
    }

    pub fn bn_scale(layer: &str) -> String {
        format!("{layer}.bn.scale")
    }

    pub fn bn_shift(layer: &str) -> String {
        format!("{layer}.bn.shift")
    }
}

/// All learnable tensors by name, plus running statistics by layer.
#[derive(Debug, Clone, PartialEq)]
pub struct ParameterStore<T> {
    params: IndexMap<String, Tensor<T>>,
    running: IndexMap<String, BnStats<T>>,
}

impl<T: Element> Default for ParameterStore<T> {
    fn default() -> Self {
        Self {
            params: IndexMap::new(),
            running: IndexMap::new(),
        }
    }
}

fn uniform<T: Element, R: Rng>(rng: &mut R, shape: &[usize], fan_in: usize) -> Tensor<T> {
    let bound = 1.0 / (fan_in as f64).sqrt();
    Tensor::from_fn(shape, |_| T::cast(rng.gen_range(-bound..bound)))
}

impl<T: Element> ParameterStore<T> {
    pub fn new() -> Self {
        Self::default()
    }

    /// Fresh parameters for `config`.
    ///
    /// Linear and convolution weights (and their biases) are drawn from
    /// `U(−1/√fan_in, 1/√fan_in)`. The residual fusion layer starts at zero
    /// so the initial descriptor is exactly the local prototype. Batch-norm
    /// scales start at one, shifts at zero.
    pub fn init<R: Rng>(config: &ModelConfig, rng: &mut R) -> Result<Self> {
        use names::*;
        config.validate()?;
        let [w1, w2] = ENCODER_WIDTHS;
        let (cc, d, l, s, c) = (
            config.channels,
            config.feature_dim,
            config.clip_len,
            config.part_size,
            config.num_classes,
        );
        let mut store = Self::new();
        store.insert(CONV1_W, uniform(rng, &[w1, cc, 3, 3], cc * 9));
        store.insert(CONV1_B, uniform(rng, &[w1], cc * 9));
        store.insert(CONV2_W, uniform(rng, &[w2, w1, 3, 3], w1 * 9));
        store.insert(CONV2_B, uniform(rng, &[w2], w1 * 9));
        store.insert(ENC_FC_W, uniform(rng, &[d, w2], w2));
        store.insert(ENC_FC_B, uniform(rng, &[d], w2));
        store.insert(LAQ_KERNEL, uniform(rng, &[l, l, s], l * s));
        store.insert(LAQ_MLP_W, uniform(rng, &[l, l], l));
        store.insert(LAQ_MLP_B, uniform(rng, &[l], l));
        for layer in [QUERY, KEY, VALUE] {
            store.insert(&weight(layer), uniform(rng, &[d, d], d));
            store.insert(&bn_scale(layer), Tensor::ones([d]));
            store.insert(&bn_shift(layer), Tensor::zeros([d]));
            store.running.insert(bn(layer), BnStats::new(d));
        }
        store.insert(FUSION_W, Tensor::zeros([d, d]));
        store.insert(FUSION_B, Tensor::zeros([d]));
        store.insert(CLS_W, uniform(rng, &[c, d], d));
        store.insert(CLS_B, uniform(rng, &[c], d));
        Ok(store)
    }

    /// Replaces the zero-initialized fusion layer with uniform draws, so
    /// that every parameter receives a nonzero gradient.
    pub fn randomize_fusion<R: Rng>(&mut self, rng: &mut R) -> Result<()> {
        let d = self.get(names::FUSION_B)?.len();
        self.insert(names::FUSION_W, uniform(rng, &[d, d], d));
        self.insert(names::FUSION_B, uniform(rng, &[d], d));
        Ok(())
    }

    pub fn insert(&mut self, name: &str, value: Tensor<T>) {
        self.params.insert(name.to_string(), value);
    }

    pub fn insert_running(&mut self, layer: &str, stats: BnStats<T>) {
        self.running.insert(layer.to_string(), stats);
    }

    pub fn get(&self, name: &str) -> Result<&Tensor<T>> {
        self.params
            .get(name)
            .ok_or_else(|| CoreError::MissingParameter(name.to_string()))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor<T>> {
        self.params
            .get_mut(name)
            .ok_or_else(|| CoreError::MissingParameter(name.to_string()))
    }

    pub fn running(&self, layer: &str) -> Result<&BnStats<T>> {
        self.running
            .get(layer)
            .ok_or_else(|| CoreError::MissingParameter(layer.to_string()))
    }

    pub fn running_mut(&mut self, layer: &str) -> Result<&mut BnStats<T>> {
        self.running
            .get_mut(layer)
            .ok_or_else(|| CoreError::MissingParameter(layer.to_string()))
    }

    pub fn params(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.params.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn params_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor<T>)> {
        self.params.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn running_stats(&self) -> impl Iterator<Item = (&str, &BnStats<T>)> {
        self.running.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn names(&self) -> Vec<String> {
        self.params.keys().cloned().collect()
    }

    pub fn num_scalars(&self) -> usize {
        self.params.values().map(|t| t.len()).sum()
    }

    pub fn cast<U: Element>(&self) -> ParameterStore<U> {
        ParameterStore {
            params: self.params.iter().map(|(k, v)| (k.clone(), v.cast())).collect(),
            running: self
                .running
                .iter()
                .map(|(k, s)| {
                    (
                        k.clone(),
                        BnStats {
                            mean: s.mean.cast(),
                            var: s.var.cast(),
                        },
                    )
                })
                .collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn init_shapes_and_zero_fusion() {
        let cfg = ModelConfig::default();
        let store = ParameterStore::<f32>::init(&cfg, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert_eq!(store.get(names::LAQ_KERNEL).unwrap().shape(), &[10, 10, 10]);
        assert_eq!(store.get(names::CLS_W).unwrap().shape(), &[16, 64]);
        assert!(store.get(names::FUSION_W).unwrap().data().iter().all(|&v| v == 0.0));
        assert_eq!(store.running_stats().count(), 3);
        let bound = 1.0 / (100f32).sqrt();
        assert!(store
            .get(names::LAQ_KERNEL)
            .unwrap()
            .data()
            .iter()
            .all(|v| v.abs() <= bound));
    }

    #[test]
    fn init_is_seeded() {
        let cfg = ModelConfig::default();
        let a = ParameterStore::<f32>::init(&cfg, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        let b = ParameterStore::<f32>::init(&cfg, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        assert_eq!(a, b);
    }
}
