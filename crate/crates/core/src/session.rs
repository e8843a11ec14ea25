//! One forward (and optional backward) pass over a [`ParameterStore`].

use std::collections::HashMap;

use indexmap::IndexMap;
use loga_tensor::{BatchNormMode, Element, FaultSite, Graph, Tensor, Var};

use crate::error::Result;
use crate::params::{names, ParameterStore};

/// Binds stored parameters into a fresh [`Graph`] on first use.
///
/// In train mode parameters become differentiable leaves and batch-norm
/// layers update the store's running statistics. In eval mode parameters
/// are constants and the statistics are read-only.
pub struct Session<'s, T: Element> {
    pub graph: Graph<T>,
    store: &'s mut ParameterStore<T>,
    bound: HashMap<String, Var>,
    mode: BatchNormMode,
    trainable: bool,
}

impl<'s, T: Element> Session<'s, T> {
    pub fn new(store: &'s mut ParameterStore<T>, mode: BatchNormMode) -> Self {
        Self {
            graph: Graph::new(),
            store,
            bound: HashMap::new(),
            mode,
            trainable: mode == BatchNormMode::Train,
        }
    }

    /// Eval-mode statistics with differentiable parameters.
    pub fn with_trainable(mut self, trainable: bool) -> Self {
        self.trainable = trainable;
        self
    }

    pub fn inject_fault(&mut self, site: Option<FaultSite>) {
        self.graph.inject_fault(site);
    }

    pub fn mode(&self) -> BatchNormMode {
        self.mode
    }

    pub fn store(&self) -> &ParameterStore<T> {
        self.store
    }

    pub fn param(&mut self, name: &str) -> Result<Var> {
        if let Some(&v) = self.bound.get(name) {
            return Ok(v);
        }
        let value = self.store.get(name)?.clone();
        let v = if self.trainable {
            self.graph.leaf(value)
        } else {
            self.graph.constant(value)
        };
        self.bound.insert(name.to_string(), v);
        Ok(v)
    }

    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.graph.constant(value)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        self.graph.value(v)
    }

    /// `W·x (+ b)` with parameters `{layer}.weight` and `{layer}.bias`.
    pub fn linear(&mut self, layer: &str, x: Var, bias: bool) -> Result<Var> {
        let w = self.param(&names::weight(layer))?;
        let b = if bias {
            Some(self.param(&format!("{layer}.bias"))?)
        } else {
            None
        };
        Ok(self.graph.linear(w, x, b)?)
    }

    /// Batch normalization of `x: [D×N]` with the layer `{layer}.bn`.
    pub fn batch_norm(&mut self, layer: &str, x: Var) -> Result<Var> {
        let scale = self.param(&names::bn_scale(layer))?;
        let shift = self.param(&names::bn_shift(layer))?;
        let stats = self.store.running_mut(&names::bn(layer))?;
        Ok(self.graph.batch_norm(x, scale, shift, stats, self.mode)?)
    }

    /// Gradients for every stored parameter after a backward pass; unused
    /// parameters get zeros.
    pub fn gradients(&self) -> IndexMap<String, Tensor<T>> {
        self.store
            .params()
            .map(|(name, value)| {
                let g = self
                    .bound
                    .get(name)
                    .and_then(|&v| self.graph.grad(v).cloned())
                    .unwrap_or_else(|| Tensor::zeros(value.shape().to_vec()));
                (name.to_string(), g)
            })
            .collect()
    }
}
