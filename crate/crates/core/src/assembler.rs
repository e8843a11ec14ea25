//! Local-aligned scores, the local prototype, global-correlated scores and
//! the residual fusion.
//!
//! Clip embeddings of a whole batch are kept in one `[D×(B·L)]` matrix so
//! that batch normalization sees every frame of every clip; per-clip work
//! slices the matrix by columns.

use loga_tensor::{Element, Var};

use crate::error::{CoreError, Result};
use crate::params::names;
use crate::session::Session;

/// Local-branch result for one clip.
#[derive(Debug, Clone, Copy)]
pub struct LaqOutput {
    /// `[L×1]`, a probability vector.
    pub w_local: Var,
    /// `[M×L]`, part-wise responses per frame.
    pub part_scores: Var,
}

/// Local aligned quality of one clip from its flattened pixels `[L×(H·W)]`.
///
/// Frames are stacked as conv channels; a strided 1D convolution with
/// `Cout = Cin = L` responds to each of the `M` non-overlapping parts, the
/// responses are averaged per frame, then a single ReLU layer and a softmax
/// give the frame weights.
pub fn laq_scores<T: Element>(s: &mut Session<'_, T>, laq_input: Var) -> Result<LaqOutput> {
    let kernel = s.param(names::LAQ_KERNEL)?;
    let (l, span) = {
        let k = s.value(kernel).shape();
        (k[0], k[2])
    };
    let width = s.value(laq_input).shape()[1];
    if width < span {
        return Err(CoreError::Config(format!(
            "part size {span} exceeds the {width} pixels of a frame"
        )));
    }
    let g = &mut s.graph;
    let responses = g.conv1d(laq_input, kernel, span)?;
    let part_scores = g.transpose(responses)?;
    let pooled = g.mean_axis(part_scores, 0)?;
    let pooled = g.reshape(pooled, &[l, 1])?;
    let hidden = s.linear("laq.mlp", pooled, true)?;
    let g = &mut s.graph;
    let hidden = g.relu(hidden);
    let w_local = g.softmax(hidden);
    Ok(LaqOutput {
        w_local,
        part_scores,
    })
}

/// `p = E·w`: the weighted sum of the clip's frame embeddings, `[D×1]`.
pub fn prototype<T: Element>(s: &mut Session<'_, T>, embeddings: Var, weights: Var) -> Result<Var> {
    Ok(s.graph.matmul(embeddings, weights)?)
}

/// Uniform-weight prototype: the column mean of `[D×L]` as `[D×1]`.
pub fn column_mean<T: Element>(s: &mut Session<'_, T>, embeddings: Var) -> Result<Var> {
    let d = s.value(embeddings).shape()[0];
    let m = s.graph.mean_axis(embeddings, 1)?;
    Ok(s.graph.reshape(m, &[d, 1])?)
}

/// `BN(W·x)` for the query, key or value projection.
fn project<T: Element>(s: &mut Session<'_, T>, layer: &str, x: Var) -> Result<Var> {
    let y = s.linear(layer, x, false)?;
    s.batch_norm(layer, y)
}

/// Global correlated quality for every clip of a batch.
///
/// `embeddings: [D×(B·L)]`, `prototypes: [D×B]`. Returns one `[L×1]`
/// probability vector per clip: `softmax(Kᵀq)` with `q = BN(θq·p)` and
/// `K = BN(θk·E)`.
pub fn gcq_scores<T: Element>(
    s: &mut Session<'_, T>,
    embeddings: Var,
    prototypes: Var,
    clip_len: usize,
    attention_scale: bool,
) -> Result<Vec<Var>> {
    let (d, clips) = s.value(prototypes).dims2("gcq_scores")?;
    let total = s.value(embeddings).shape()[1];
    if total != clips * clip_len {
        return Err(CoreError::Config(format!(
            "{total} frame columns for {clips} clips of length {clip_len}"
        )));
    }
    let queries = project(s, names::QUERY, prototypes)?;
    let keys = project(s, names::KEY, embeddings)?;
    let g = &mut s.graph;
    let mut out = Vec::with_capacity(clips);
    for b in 0..clips {
        let k = g.slice(keys, 1, b * clip_len, clip_len)?;
        let q = g.slice(queries, 1, b, 1)?;
        let kt = g.transpose(k)?;
        let mut logits = g.matmul(kt, q)?;
        if attention_scale {
            logits = g.scale(logits, T::cast(1.0 / (d as f64).sqrt()));
        }
        out.push(g.softmax(logits));
    }
    Ok(out)
}

/// Output of the residual fusion for a batch.
#[derive(Debug, Clone, Copy)]
pub struct Fused {
    /// `[D×B]` descriptors `x = p + FC(p̂)`.
    pub descriptors: Var,
    /// `[D×B]` globally assembled features `p̂ = V·w_global`.
    pub p_hat: Var,
}

/// `V = BN(θv·E)`, `p̂ = V·w_global` per clip, `x = p + FC(p̂)`.
pub fn assemble<T: Element>(
    s: &mut Session<'_, T>,
    embeddings: Var,
    prototypes: Var,
    w_global: &[Var],
    clip_len: usize,
) -> Result<Fused> {
    let values = project(s, names::VALUE, embeddings)?;
    let g = &mut s.graph;
    let mut cols = Vec::with_capacity(w_global.len());
    for (b, &w) in w_global.iter().enumerate() {
        let v = g.slice(values, 1, b * clip_len, clip_len)?;
        cols.push(g.matmul(v, w)?);
    }
    let p_hat = g.concat(&cols, 1)?;
    let residual = s.linear("gcq.fusion", p_hat, true)?;
    let descriptors = s.graph.add(prototypes, residual)?;
    Ok(Fused { descriptors, p_hat })
}
