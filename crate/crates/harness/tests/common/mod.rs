#![allow(dead_code)]

use loga_datagen::{generate, Dataset, DatasetManifest};
use loga_harness::eval::{cosine, Entry};
use loga_harness::TrainConfig;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// 8 identities (4 for training), 4 tracklets of 20 frames, 2 clips each.
pub fn small_dataset() -> Dataset {
    generate(&DatasetManifest {
        num_identities: 8,
        train_identities: 4,
        tracklets_per_identity: 4,
        frames_per_tracklet: 20,
        clip_len: 10,
        ..DatasetManifest::default()
    })
    .unwrap()
}

pub fn small_config() -> TrainConfig {
    TrainConfig {
        p: 2,
        k: 4,
        feature_dim: 16,
        epochs: 2,
        ..TrainConfig::default()
    }
}

pub fn entry(identity: usize, camera: usize, descriptor: Vec<f64>) -> Entry {
    Entry {
        tracklet: 0,
        identity,
        camera,
        descriptor,
    }
}

pub struct Oracle {
    pub cmc: Vec<f64>,
    pub map: f64,
    pub ap: Vec<f64>,
    pub excluded: usize,
}

/// AP over the common denominator `n · Π(rank + 1)`, reduced once.
pub fn exact_ap(ranks: &[usize]) -> f64 {
    let den: u128 = ranks.iter().map(|&r| (r + 1) as u128).product::<u128>() * ranks.len() as u128;
    let num: u128 = ranks
        .iter()
        .enumerate()
        .map(|(n, &r)| (n + 1) as u128 * (den / ranks.len() as u128 / (r + 1) as u128))
        .sum();
    let (mut a, mut b) = (num, den);
    while b != 0 {
        (a, b) = (b, a % b);
    }
    (num / a) as f64 / (den / a) as f64
}

/// Ranks by counting, for every gallery item, the valid items that beat it
/// (higher similarity, or equal similarity and lower index).
pub fn oracle(query: &[Entry], gallery: &[Entry], depth: usize) -> Oracle {
    let mut hits = vec![0usize; depth];
    let mut ap = Vec::new();
    let mut excluded = 0;
    for q in query {
        let valid = |g: &Entry| !(g.identity == q.identity && g.camera == q.camera);
        let sims: Vec<f64> = gallery.iter().map(|g| cosine(&q.descriptor, &g.descriptor)).collect();
        let mut correct_ranks = Vec::new();
        for (j, g) in gallery.iter().enumerate() {
            if !valid(g) || g.identity != q.identity {
                continue;
            }
            let rank = (0..gallery.len())
                .filter(|&i| valid(&gallery[i]) && (sims[i] > sims[j] || (sims[i] == sims[j] && i < j)))
                .count();
            correct_ranks.push(rank);
        }
        if correct_ranks.is_empty() {
            excluded += 1;
            continue;
        }
        correct_ranks.sort_unstable();
        for (k, h) in hits.iter_mut().enumerate() {
            if correct_ranks[0] <= k {
                *h += 1;
            }
        }
        ap.push(exact_ap(&correct_ranks));
    }
    let n = ap.len();
    Oracle {
        cmc: hits.iter().map(|&h| if n == 0 { 0.0 } else { h as f64 / n as f64 }).collect(),
        map: if n == 0 { 0.0 } else { ap.iter().sum::<f64>() / n as f64 },
        ap,
        excluded,
    }
}

/// Descriptors on a coarse grid so that exact similarity ties occur.
pub fn random_instance(rng: &mut ChaCha8Rng) -> (Vec<Entry>, Vec<Entry>) {
    let ids = 4;
    let dim = rng.gen_range(2..5);
    let (nq, ng) = (rng.gen_range(1..=8), rng.gen_range(1..=16));
    let mut make = |n: usize| -> Vec<Entry> {
        (0..n)
            .map(|_| {
                entry(
                    rng.gen_range(0..ids),
                    rng.gen_range(0..2),
                    (0..dim).map(|_| rng.gen_range(-2..=2) as f64).collect(),
                )
            })
            .collect()
    };
    let q = make(nq);
    let g = make(ng);
    (q, g)
}
