//! Identity cross-entropy and triplet ranking losses.

use loga_tensor::{Element, Graph, Var};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::session::Session;

/// How positives and negatives are picked for each anchor of a batch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mining {
    /// One uniformly random same-identity and different-identity sample.
    #[default]
    Random,
    /// Farthest positive and closest negative, by current distances.
    BatchHard,
}

/// Loss graph node plus the component values for logging.
#[derive(Debug, Clone, Copy)]
pub struct LossTerms {
    pub total: Var,
    /// Mean identity loss over the batch.
    pub id_loss: f64,
    /// Mean triplet loss over the batch (anchors without a triplet count as 0).
    pub triplet_loss: f64,
    /// Anchors that had no valid positive or negative.
    pub missing_triplets: usize,
}

/// `[C×B]` identity logits of `[D×B]` descriptors.
pub fn classify<T: Element>(s: &mut Session<'_, T>, descriptors: Var) -> Result<Var> {
    s.linear("classifier", descriptors, true)
}

fn check_labels<T: Element>(s: &Session<'_, T>, labels: &[usize]) -> Result<()> {
    let classes = s.store().get("classifier.bias")?.len();
    match labels.iter().find(|&&y| y >= classes) {
        Some(y) => Err(CoreError::Data(format!(
            "label {y} out of range for {classes} identities"
        ))),
        None => Ok(()),
    }
}

/// `−log softmax(FC(x))[y]` for one descriptor `x: [D×1]`.
pub fn id_loss<T: Element>(s: &mut Session<'_, T>, x: Var, label: usize) -> Result<Var> {
    check_labels(s, &[label])?;
    let d = s.value(x).len();
    let x = s.graph.reshape(x, &[d, 1])?;
    let logits = classify(s, x)?;
    let ce = s.graph.cross_entropy(logits, &[label])?;
    Ok(s.graph.sum(ce))
}

/// `max(0, margin + ‖a − p‖ − ‖a − n‖)`.
pub fn triplet_loss<T: Element>(
    g: &mut Graph<T>,
    anchor: Var,
    positive: Var,
    negative: Var,
    margin: T,
) -> Result<Var> {
    let dp = g.euclidean_distance(anchor, positive)?;
    let dn = g.euclidean_distance(anchor, negative)?;
    let gap = g.sub(dp, dn)?;
    let shifted = g.add_scalar(gap, margin);
    Ok(g.relu(shifted))
}

fn column_distance<T: Element>(data: &[T], b: usize, i: usize, j: usize) -> f64 {
    let d = data.len() / b;
    (0..d)
        .map(|r| {
            let diff = data[r * b + i].widen() - data[r * b + j].widen();
            diff * diff
        })
        .sum::<f64>()
        .sqrt()
}

/// Picks `(positive, negative)` for every anchor; `None` when the batch has
/// no valid choice. Random mining draws the positive, then the negative,
/// anchor by anchor.
pub fn select_triplets<T: Element, R: Rng>(
    descriptors: &[T],
    labels: &[usize],
    mining: Mining,
    rng: &mut R,
) -> Vec<Option<(usize, usize)>> {
    let b = labels.len();
    (0..b)
        .map(|i| {
            let pos: Vec<usize> = (0..b).filter(|&j| j != i && labels[j] == labels[i]).collect();
            let neg: Vec<usize> = (0..b).filter(|&j| labels[j] != labels[i]).collect();
            if pos.is_empty() || neg.is_empty() {
                return None;
            }
            match mining {
                Mining::Random => {
                    let p = pos[rng.gen_range(0..pos.len())];
                    let n = neg[rng.gen_range(0..neg.len())];
                    Some((p, n))
                }
                Mining::BatchHard => {
                    let dist = |j: usize| column_distance(descriptors, b, i, j);
                    let p = pos
                        .iter()
                        .copied()
                        .max_by(|&x, &y| dist(x).total_cmp(&dist(y)).then(y.cmp(&x)))
                        .unwrap();
                    let n = neg
                        .iter()
                        .copied()
                        .min_by(|&x, &y| dist(x).total_cmp(&dist(y)).then(x.cmp(&y)))
                        .unwrap();
                    Some((p, n))
                }
            }
        })
        .collect()
}

/// `(1/n) Σ_i [id_loss(x_i) + triplet_loss(x_i, x_i⁺, x_i⁻)]` over the
/// columns of `descriptors: [D×B]`.
pub fn batch_loss<T: Element, R: Rng>(
    s: &mut Session<'_, T>,
    descriptors: Var,
    labels: &[usize],
    margin: f64,
    mining: Mining,
    rng: &mut R,
) -> Result<LossTerms> {
    let (_, b) = s.value(descriptors).dims2("batch_loss")?;
    if labels.len() != b {
        return Err(CoreError::Data(format!("{} labels for {b} descriptors", labels.len())));
    }
    if margin < 0.0 {
        return Err(CoreError::Config(format!("negative margin {margin}")));
    }
    check_labels(s, labels)?;
    let logits = classify(s, descriptors)?;
    let ce = s.graph.cross_entropy(logits, labels)?;
    let id_sum = s.graph.sum(ce);
    let id_value = s.value(id_sum).item().widen();

    let triplets = select_triplets(s.value(descriptors).data(), labels, mining, rng);
    let g = &mut s.graph;
    let cols: Vec<Var> = (0..b)
        .map(|j| g.slice(descriptors, 1, j, 1))
        .collect::<std::result::Result<_, _>>()?;
    let mut missing = 0;
    let mut trip_sum: Option<Var> = None;
    for (i, t) in triplets.iter().enumerate() {
        let Some((p, n)) = *t else {
            missing += 1;
            continue;
        };
        let term = triplet_loss(g, cols[i], cols[p], cols[n], T::cast(margin))?;
        trip_sum = Some(match trip_sum {
            Some(acc) => g.add(acc, term)?,
            None => term,
        });
    }
    if missing > 0 {
        log::warn!("{missing} of {b} anchors had no valid triplet");
    }
    let trip_value = trip_sum.map_or(0.0, |v| g.value(v).item().widen());
    let sum = match trip_sum {
        Some(t) => g.add(id_sum, t)?,
        None => id_sum,
    };
    let total = g.scale(sum, T::cast(1.0 / b as f64));
    Ok(LossTerms {
        total,
        id_loss: id_value / b as f64,
        triplet_loss: trip_value / b as f64,
        missing_triplets: missing,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use loga_tensor::Tensor;

    fn hinge(dp: f64, dn: f64, margin: f64) -> f64 {
        // anchor at origin, positive and negative on separate axes
        let mut g = Graph::<f64>::new();
        let a = g.leaf(Tensor::zeros([2]));
        let p = g.leaf(Tensor::from_f64([2], &[dp, 0.0]).unwrap());
        let n = g.leaf(Tensor::from_f64([2], &[0.0, dn]).unwrap());
        let l = triplet_loss(&mut g, a, p, n, margin).unwrap();
        g.value(l).item()
    }

    #[test]
    fn hinge_arithmetic() {
        assert_eq!(hinge(0.2, 0.6, 0.3), 0.0);
        assert!((hinge(0.5, 0.3, 0.3) - 0.5).abs() < 1e-12);
        assert_eq!(hinge(0.0, 0.9, 0.3), 0.0);
    }

    #[test]
    fn hinge_is_monotone() {
        let base = hinge(0.5, 0.6, 0.3);
        assert!(hinge(0.6, 0.6, 0.3) >= base);
        assert!(hinge(0.5, 0.7, 0.3) <= base);
    }

    #[test]
    fn no_triplets_for_single_identity_or_singletons() {
        let mut rng = rand::thread_rng();
        let d = [0.0f64; 4];
        let t = select_triplets(&d, &[1, 1], Mining::Random, &mut rng);
        assert!(t.iter().all(Option::is_none));
        let t = select_triplets(&d, &[0, 1], Mining::BatchHard, &mut rng);
        assert!(t.iter().all(Option::is_none));
    }

    #[test]
    fn batch_hard_picks_extremes() {
        // 1-D descriptors as a [1×4] row
        let d = [0.0f64, 1.0, 3.0, 0.5];
        let labels = [0, 0, 0, 1];
        let t = select_triplets(&d, &labels, Mining::BatchHard, &mut rand::thread_rng());
        assert_eq!(t[0], Some((2, 3)));
        assert_eq!(t[3], None);
    }
}
