//! Frame assembling strategies, selectable by name.
//!
//! | name             | descriptor                                               |
//! |------------------|----------------------------------------------------------|
//! | `mean_pool`      | column mean of `E`                                       |
//! | `laq_only`       | local prototype `p = E·w_local`                          |
//! | `gcq_only`       | `mean(E) + FC(V·w_global)`, query from the mean          |
//! | `dual_branch`    | `laq_only + gcq_only`, computed independently            |
//! | `direct_connect` | self-attention over `E` rescaled by `L·w_local`          |
//! | `associative`    | `p + FC(V·w_global)`, query from the local prototype     |
//!
//! `dual_branch` and `direct_connect` are approximate reconstructions of
//! the separately-assembled and directly-connected ablation baselines.

use std::fmt;
use std::sync::Arc;

use indexmap::IndexMap;
use loga_tensor::{Element, Var};

use crate::assembler::{self, LaqOutput};
use crate::error::{CoreError, Result};
use crate::session::Session;

/// Inputs shared by all strategies for one batch of clips.
#[derive(Debug, Clone)]
pub struct BatchFeatures {
    /// `[D×(B·L)]`, clip-major frame embeddings.
    pub embeddings: Var,
    /// One `[L×(H·W)]` constant per clip.
    pub laq_inputs: Vec<Var>,
    pub clip_len: usize,
    pub attention_scale: bool,
}

impl BatchFeatures {
    pub fn clips(&self) -> usize {
        self.laq_inputs.len()
    }

    /// `[D×L]` embeddings of clip `b`.
    pub fn clip_embeddings<T: Element>(&self, s: &mut Session<'_, T>, b: usize) -> Result<Var> {
        Ok(s.graph.slice(self.embeddings, 1, b * self.clip_len, self.clip_len)?)
    }
}

/// Per-clip intermediate values exposed for inspection.
#[derive(Debug, Clone, Copy, Default)]
pub struct ClipTrace {
    pub w_local: Option<Var>,
    pub w_global: Option<Var>,
    pub prototype: Option<Var>,
    pub p_hat: Option<Var>,
}

/// Result of assembling a batch.
#[derive(Debug, Clone)]
pub struct Assembled {
    /// `[D×B]` clip descriptors.
    pub descriptors: Var,
    pub traces: Vec<ClipTrace>,
}

/// A way of turning per-frame features into one clip descriptor.
pub trait AssemblyStrategy<T: Element>: Send + Sync {
    fn name(&self) -> &'static str;

    fn assemble(&self, s: &mut Session<'_, T>, features: &BatchFeatures) -> Result<Assembled>;
}

impl<T: Element> fmt::Debug for dyn AssemblyStrategy<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "AssemblyStrategy({})", self.name())
    }
}

fn local_branch<T: Element>(
    s: &mut Session<'_, T>,
    f: &BatchFeatures,
) -> Result<(Vec<Var>, Vec<LaqOutput>, Vec<Var>)> {
    let mut embeds = Vec::with_capacity(f.clips());
    let mut laq = Vec::with_capacity(f.clips());
    let mut protos = Vec::with_capacity(f.clips());
    for b in 0..f.clips() {
        let e = f.clip_embeddings(s, b)?;
        let out = assembler::laq_scores(s, f.laq_inputs[b])?;
        protos.push(assembler::prototype(s, e, out.w_local)?);
        embeds.push(e);
        laq.push(out);
    }
    Ok((embeds, laq, protos))
}

fn mean_prototypes<T: Element>(s: &mut Session<'_, T>, f: &BatchFeatures) -> Result<Vec<Var>> {
    (0..f.clips())
        .map(|b| {
            let e = f.clip_embeddings(s, b)?;
            assembler::column_mean(s, e)
        })
        .collect()
}

/// Global branch plus residual fusion around the given prototypes.
fn global_branch<T: Element>(
    s: &mut Session<'_, T>,
    embeddings: Var,
    protos: &[Var],
    f: &BatchFeatures,
) -> Result<(assembler::Fused, Vec<Var>)> {
    let p_all = s.graph.concat(protos, 1)?;
    let w_global = assembler::gcq_scores(s, embeddings, p_all, f.clip_len, f.attention_scale)?;
    let fused = assembler::assemble(s, embeddings, p_all, &w_global, f.clip_len)?;
    Ok((fused, w_global))
}

fn column_traces<T: Element>(s: &mut Session<'_, T>, all: Var, n: usize) -> Result<Vec<Var>> {
    (0..n).map(|b| Ok(s.graph.slice(all, 1, b, 1)?)).collect()
}

#[derive(Debug, Default, Clone, Copy)]
pub struct MeanPool;

impl<T: Element> AssemblyStrategy<T> for MeanPool {
    fn name(&self) -> &'static str {
        "mean_pool"
    }

    fn assemble(&self, s: &mut Session<'_, T>, f: &BatchFeatures) -> Result<Assembled> {
        let protos = mean_prototypes(s, f)?;
        let descriptors = s.graph.concat(&protos, 1)?;
        Ok(Assembled {
            descriptors,
            traces: vec![ClipTrace::default(); f.clips()],
        })
    }
}

#[derive(Debug, Default, Clone, Copy)]
pub struct LaqOnly;

impl<T: Element> AssemblyStrategy<T> for LaqOnly {
    fn name(&self) -> &'static str {
        "laq_only"
    }

    fn assemble(&self, s: &mut Session<'_, T>, f: &BatchFeatures) -> Result<Assembled> {
        let (_, laq, protos) = local_branch(s, f)?;
        let descriptors = s.graph.concat(&protos, 1)?;
        let traces = laq
            .iter()
            .zip(&protos)
            .map(|(l, &p)| ClipTrace {
                w_local: Some(l.w_local),
                prototype: Some(p),
                ..ClipTrace::default()
            })
            .collect();
        Ok(Assembled { descriptors, traces })
    }
}

#[derive(Debug, Default, Clone, Copy)]
pub struct GcqOnly;

impl<T: Element> AssemblyStrategy<T> for GcqOnly {
    fn name(&self) -> &'static str {
        "gcq_only"
    }

    fn assemble(&self, s: &mut Session<'_, T>, f: &BatchFeatures) -> Result<Assembled> {
        let protos = mean_prototypes(s, f)?;
        let (fused, w_global) = global_branch(s, f.embeddings, &protos, f)?;
        let p_hats = column_traces(s, fused.p_hat, f.clips())?;
        let traces = (0..f.clips())
            .map(|b| ClipTrace {
                w_global: Some(w_global[b]),
                prototype: Some(protos[b]),
                p_hat: Some(p_hats[b]),
                ..ClipTrace::default()
            })
            .collect();
        Ok(Assembled {
            descriptors: fused.descriptors,
            traces,
        })
    }
}

#[derive(Debug, Default, Clone, Copy)]
pub struct DualBranch;

impl<T: Element> AssemblyStrategy<T> for DualBranch {
    fn name(&self) -> &'static str {
        "dual_branch"
    }

    fn assemble(&self, s: &mut Session<'_, T>, f: &BatchFeatures) -> Result<Assembled> {
        let local = LaqOnly.assemble(s, f)?;
        let global = <GcqOnly as AssemblyStrategy<T>>::assemble(&GcqOnly, s, f)?;
        let descriptors = s.graph.add(local.descriptors, global.descriptors)?;
        let traces = local
            .traces
            .iter()
            .zip(&global.traces)
            .map(|(l, g)| ClipTrace {
                w_local: l.w_local,
                w_global: g.w_global,
                prototype: l.prototype,
                p_hat: g.p_hat,
            })
            .collect();
        Ok(Assembled { descriptors, traces })
    }
}

#[derive(Debug, Default, Clone, Copy)]
pub struct DirectConnect;

impl<T: Element> AssemblyStrategy<T> for DirectConnect {
    fn name(&self) -> &'static str {
        "direct_connect"
    }

    fn assemble(&self, s: &mut Session<'_, T>, f: &BatchFeatures) -> Result<Assembled> {
        let l = T::cast(f.clip_len as f64);
        let mut rescaled = Vec::with_capacity(f.clips());
        let mut queries = Vec::with_capacity(f.clips());
        let mut w_locals = Vec::with_capacity(f.clips());
        for b in 0..f.clips() {
            let e = f.clip_embeddings(s, b)?;
            let out = assembler::laq_scores(s, f.laq_inputs[b])?;
            let scale = s.graph.scale(out.w_local, l);
            let r = s.graph.scale_columns(e, scale)?;
            queries.push(assembler::column_mean(s, r)?);
            rescaled.push(r);
            w_locals.push(out.w_local);
        }
        let rescaled_all = s.graph.concat(&rescaled, 1)?;
        let (fused, w_global) = global_branch(s, rescaled_all, &queries, f)?;
        let p_hats = column_traces(s, fused.p_hat, f.clips())?;
        let traces = (0..f.clips())
            .map(|b| ClipTrace {
                w_local: Some(w_locals[b]),
                w_global: Some(w_global[b]),
                prototype: Some(queries[b]),
                p_hat: Some(p_hats[b]),
            })
            .collect();
        Ok(Assembled {
            descriptors: fused.descriptors,
            traces,
        })
    }
}

#[derive(Debug, Default, Clone, Copy)]
pub struct Associative;

impl<T: Element> AssemblyStrategy<T> for Associative {
    fn name(&self) -> &'static str {
        "associative"
    }

    fn assemble(&self, s: &mut Session<'_, T>, f: &BatchFeatures) -> Result<Assembled> {
        let (_, laq, protos) = local_branch(s, f)?;
        let (fused, w_global) = global_branch(s, f.embeddings, &protos, f)?;
        let p_hats = column_traces(s, fused.p_hat, f.clips())?;
        let traces = (0..f.clips())
            .map(|b| ClipTrace {
                w_local: Some(laq[b].w_local),
                w_global: Some(w_global[b]),
                prototype: Some(protos[b]),
                p_hat: Some(p_hats[b]),
            })
            .collect();
        Ok(Assembled {
            descriptors: fused.descriptors,
            traces,
        })
    }
}

/// Strategies by name, in registration order.
pub struct StrategyRegistry<T: Element> {
    entries: IndexMap<&'static str, Arc<dyn AssemblyStrategy<T>>>,
}

impl<T: Element> Default for StrategyRegistry<T> {
    fn default() -> Self {
        Self::with_defaults()
    }
}

impl<T: Element> StrategyRegistry<T> {
    pub const DEFAULT: &'static str = "associative";

    pub fn empty() -> Self {
        Self {
            entries: IndexMap::new(),
        }
    }

    /// All six built-in strategies.
    pub fn with_defaults() -> Self {
        let mut r = Self::empty();
        r.register(Arc::new(MeanPool));
        r.register(Arc::new(LaqOnly));
        r.register(Arc::new(GcqOnly));
        r.register(Arc::new(DualBranch));
        r.register(Arc::new(DirectConnect));
        r.register(Arc::new(Associative));
        r
    }

    /// Adds or replaces the strategy under its own name.
    pub fn register(&mut self, strategy: Arc<dyn AssemblyStrategy<T>>) {
        self.entries.insert(strategy.name(), strategy);
    }

    pub fn get(&self, name: &str) -> Result<Arc<dyn AssemblyStrategy<T>>> {
        self.entries
            .get(name)
            .cloned()
            .ok_or_else(|| CoreError::UnknownStrategy(name.to_string()))
    }

    pub fn names(&self) -> Vec<&'static str> {
        self.entries.keys().copied().collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn registry_lists_all_strategies_in_order() {
        let r = StrategyRegistry::<f32>::with_defaults();
        assert_eq!(
            r.names(),
            [
                "mean_pool",
                "laq_only",
                "gcq_only",
                "dual_branch",
                "direct_connect",
                "associative"
            ]
        );
        assert_eq!(r.get("associative").unwrap().name(), "associative");
    }

    #[test]
    fn unknown_strategy_is_a_config_error() {
        let r = StrategyRegistry::<f64>::with_defaults();
        assert!(matches!(r.get("attention"), Err(CoreError::UnknownStrategy(_))));
    }
}
