//! Tracklet descriptors and retrieval metrics (CMC, mAP).

use std::cmp::Ordering;

use loga_core::{AssemblyStrategy, Clip, LogaModel};
use loga_datagen::{Dataset, Split, TrackletView};
use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::error::{HarnessError, Result};
use crate::train::strategy;

/// Ranks reported when none are requested.
pub const DEFAULT_RANKS: [usize; 3] = [1, 5, 20];
/// CMC curves always extend at least this far.
pub const CMC_DEPTH: usize = 20;

/// A described tracklet with its labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Entry {
    pub tracklet: usize,
    pub identity: usize,
    pub camera: usize,
    pub descriptor: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    /// `cmc[k-1]`: fraction of evaluated queries with a correct match in
    /// the top `k`.
    pub cmc: Vec<f64>,
    pub map: f64,
    /// Average precision of every evaluated query, in query order.
    pub average_precision: Vec<f64>,
    /// Positions (in the query list) of the evaluated queries.
    pub evaluated: Vec<usize>,
    /// Queries skipped for lack of a cross-camera match.
    pub excluded: usize,
}

impl EvalResult {
    /// Rank-`k` accuracy (1-based), or `None` beyond the curve.
    pub fn rank(&self, k: usize) -> Option<f64> {
        k.checked_sub(1).and_then(|i| self.cmc.get(i).copied())
    }
}

/// Builds the model stored in a checkpoint.
pub fn model_from_checkpoint(ckpt: &Checkpoint) -> Result<LogaModel<f32>> {
    Ok(LogaModel::from_parts(ckpt.model_config.clone(), ckpt.params.clone())?)
}

/// Mean of the clip descriptors of one tracklet.
pub fn extract_descriptor(
    model: &mut LogaModel<f32>,
    strategy: &dyn AssemblyStrategy<f32>,
    tracklet: usize,
    clips: &[&Clip],
) -> Result<Vec<f64>> {
    if clips.is_empty() {
        return Err(HarnessError::EmptyTracklet(tracklet));
    }
    let outputs = model.describe(strategy, clips)?;
    let mut mean = vec![0.0f64; outputs[0].descriptor.len()];
    for o in &outputs {
        for (m, &v) in mean.iter_mut().zip(&o.descriptor) {
            *m += f64::from(v);
        }
    }
    let n = outputs.len() as f64;
    mean.iter_mut().for_each(|m| *m /= n);
    Ok(mean)
}

pub fn describe_tracklets(
    model: &mut LogaModel<f32>,
    strategy: &dyn AssemblyStrategy<f32>,
    tracklets: &[TrackletView<'_>],
) -> Result<Vec<Entry>> {
    tracklets
        .iter()
        .map(|t| {
            Ok(Entry {
                tracklet: t.tracklet,
                identity: t.identity,
                camera: t.camera,
                descriptor: extract_descriptor(model, strategy, t.tracklet, &t.clips)?,
            })
        })
        .collect()
}

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

fn gcd(mut a: u128, mut b: u128) -> u128 {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

/// Largest integer below which every `u128` converts to `f64` exactly.
const EXACT_F64: u128 = 1 << 53;

/// Mean precision at the (0-based, ascending) ranking positions of the
/// correct matches. The sum of precisions is accumulated as a reduced
/// fraction and rounded once, so e.g. `(1/1 + 2/3)/2` gives exactly the
/// double nearest to 5/6. Falls back to floating-point summation if the
/// fraction outgrows 53 bits.
pub fn average_precision_of(correct: &[usize]) -> f64 {
    let exact = || -> Option<f64> {
        let (mut num, mut den) = (0u128, 1u128);
        for (j, &pos) in correct.iter().enumerate() {
            let (a, b) = ((j + 1) as u128, (pos + 1) as u128);
            let lcm = (den / gcd(den, b)).checked_mul(b)?;
            num = num.checked_mul(lcm / den)?.checked_add(a.checked_mul(lcm / b)?)?;
            den = lcm;
            let g = gcd(num, den);
            (num, den) = (num / g, den / g);
        }
        let den = den.checked_mul(correct.len() as u128)?;
        let g = gcd(num, den);
        let (num, den) = (num / g, den / g);
        (num < EXACT_F64 && den < EXACT_F64).then(|| num as f64 / den as f64)
    };
    exact().unwrap_or_else(|| {
        let sum: f64 = correct
            .iter()
            .enumerate()
            .map(|(j, &pos)| (j + 1) as f64 / (pos + 1) as f64)
            .sum();
        sum / correct.len() as f64
    })
}

/// Retrieval metrics for precomputed descriptors.
///
/// Each query ranks the gallery by descending cosine similarity, ties by
/// ascending gallery position. Gallery entries with the query's identity
/// and camera are removed from its ranking. Queries with no remaining
/// correct match are excluded from both metrics. The CMC curve extends to
/// `max(depth, CMC_DEPTH)`.
pub fn evaluate_entries(query: &[Entry], gallery: &[Entry], depth: usize) -> EvalResult {
    let depth = depth.max(CMC_DEPTH);
    let mut hits = vec![0usize; depth];
    let mut average_precision = Vec::new();
    let mut evaluated = Vec::new();
    let mut excluded = 0;
    for (qi, q) in query.iter().enumerate() {
        let mut ranked: Vec<(usize, f64)> = gallery
            .iter()
            .enumerate()
            .filter(|(_, g)| !(g.identity == q.identity && g.camera == q.camera))
            .map(|(i, g)| (i, cosine(&q.descriptor, &g.descriptor)))
            .collect();
        ranked.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap_or(Ordering::Equal).then(a.0.cmp(&b.0)));
        let correct: Vec<usize> = ranked
            .iter()
            .enumerate()
            .filter(|(_, (g, _))| gallery[*g].identity == q.identity)
            .map(|(pos, _)| pos)
            .collect();
        let Some(&first) = correct.first() else {
            excluded += 1;
            continue;
        };
        for h in hits.iter_mut().skip(first) {
            *h += 1;
        }
        average_precision.push(average_precision_of(&correct));
        evaluated.push(qi);
    }
    let n = evaluated.len();
    let (cmc, map) = if n == 0 {
        (vec![0.0; depth], 0.0)
    } else {
        (
            hits.iter().map(|&h| h as f64 / n as f64).collect(),
            average_precision.iter().sum::<f64>() / n as f64,
        )
    };
    if excluded > 0 {
        log::warn!("{excluded} queries have no cross-camera match and were excluded");
    }
    EvalResult {
        cmc,
        map,
        average_precision,
        evaluated,
        excluded,
    }
}

/// Describes the query and gallery tracklets and scores the retrieval.
pub fn evaluate_model(
    model: &mut LogaModel<f32>,
    strategy: &dyn AssemblyStrategy<f32>,
    dataset: &Dataset,
    depth: usize,
) -> Result<EvalResult> {
    let query = describe_tracklets(model, strategy, &dataset.tracklets(Split::Query))?;
    let gallery = describe_tracklets(model, strategy, &dataset.tracklets(Split::Gallery))?;
    if query.is_empty() || gallery.is_empty() {
        return Err(HarnessError::Config("dataset has no query or no gallery tracklets".into()));
    }
    Ok(evaluate_entries(&query, &gallery, depth))
}

/// Evaluates a checkpoint with the strategy it was trained with.
pub fn evaluate(ckpt: &Checkpoint, dataset: &Dataset, depth: usize) -> Result<EvalResult> {
    let mut model = model_from_checkpoint(ckpt)?;
    let strategy = strategy(&ckpt.train.strategy)?;
    evaluate_model(&mut model, strategy.as_ref(), dataset, depth)
}
