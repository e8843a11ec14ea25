//! Adam with decoupled weight decay.

use indexmap::IndexMap;
use loga_core::ParameterStore;
use loga_tensor::{Element, Tensor};

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPS: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct AdamW<T> {
    pub weight_decay: f64,
    /// Steps taken so far.
    pub t: u64,
    pub m: IndexMap<String, Tensor<T>>,
    pub v: IndexMap<String, Tensor<T>>,
}

impl<T: Element> AdamW<T> {
    pub fn new(weight_decay: f64) -> Self {
        Self {
            weight_decay,
            t: 0,
            m: IndexMap::new(),
            v: IndexMap::new(),
        }
    }

    /// One update of every parameter that has a gradient:
    /// `θ ← θ − lr·(m̂/(√v̂ + ε) + λθ)`.
    pub fn step(&mut self, params: &mut ParameterStore<T>, grads: &IndexMap<String, Tensor<T>>, lr: f64) {
        self.t += 1;
        let bc1 = 1.0 - BETA1.powi(self.t as i32);
        let bc2 = 1.0 - BETA2.powi(self.t as i32);
        for (name, theta) in params.params_mut() {
            let Some(g) = grads.get(name) else { continue };
            let m = self
                .m
                .entry(name.to_string())
                .or_insert_with(|| Tensor::zeros(g.shape().to_vec()));
            let v = self
                .v
                .entry(name.to_string())
                .or_insert_with(|| Tensor::zeros(g.shape().to_vec()));
            let (m, v) = (m.data_mut(), v.data_mut());
            for (i, (th, &gi)) in theta.data_mut().iter_mut().zip(g.data()).enumerate() {
                let gi = gi.widen();
                let mi = BETA1 * m[i].widen() + (1.0 - BETA1) * gi;
                let vi = BETA2 * v[i].widen() + (1.0 - BETA2) * gi * gi;
                m[i] = T::cast(mi);
                v[i] = T::cast(vi);
                let update = (mi / bc1) / ((vi / bc2).sqrt() + EPS) + self.weight_decay * th.widen();
                *th = T::cast(th.widen() - lr * update);
            }
        }
    }
}
