//! Identity-balanced mini-batches: `P` identities × `K` clips.

use std::collections::BTreeMap;

use rand::seq::{index, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{DataError, Result};

/// Position of a [`PkSampler`]'s random stream, for checkpointing.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SamplerState {
    pub seed: [u8; 32],
    pub stream: u64,
    pub word_pos: u128,
}

#[derive(Debug, Clone)]
pub struct PkSampler {
    /// `(identity, positions of its clips)` in ascending identity order.
    groups: Vec<(usize, Vec<usize>)>,
    p: usize,
    k: usize,
    rng: ChaCha8Rng,
}

impl PkSampler {
    /// `identities[i]` is the identity of item `i`; batches are returned as
    /// item positions.
    pub fn new(identities: &[usize], p: usize, k: usize, seed: u64) -> Result<Self> {
        if p == 0 || k == 0 {
            return Err(DataError::Sampler(format!("P={p} and K={k} must be positive")));
        }
        let mut by_id: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for (i, &id) in identities.iter().enumerate() {
            by_id.entry(id).or_default().push(i);
        }
        if by_id.len() < p {
            return Err(DataError::Sampler(format!(
                "{} identities available, {p} needed per batch",
                by_id.len()
            )));
        }
        Ok(Self {
            groups: by_id.into_iter().collect(),
            p,
            k,
            rng: ChaCha8Rng::seed_from_u64(seed),
        })
    }

    pub fn batch_size(&self) -> usize {
        self.p * self.k
    }

    /// `P` distinct identities chosen uniformly; `K` clips of each, without
    /// replacement when the identity has at least `K` clips.
    pub fn next_batch(&mut self) -> Vec<usize> {
        let chosen = index::sample(&mut self.rng, self.groups.len(), self.p).into_vec();
        let mut batch = Vec::with_capacity(self.batch_size());
        for g in chosen {
            let items = &self.groups[g].1;
            if items.len() >= self.k {
                batch.extend(items.choose_multiple(&mut self.rng, self.k).copied());
            } else {
                batch.extend((0..self.k).map(|_| items[self.rng.gen_range(0..items.len())]));
            }
        }
        batch
    }

    pub fn state(&self) -> SamplerState {
        SamplerState {
            seed: self.rng.get_seed(),
            stream: self.rng.get_stream(),
            word_pos: self.rng.get_word_pos(),
        }
    }

    pub fn restore(&mut self, state: SamplerState) {
        let mut rng = ChaCha8Rng::from_seed(state.seed);
        rng.set_stream(state.stream);
        rng.set_word_pos(state.word_pos);
        self.rng = rng;
    }
}

impl Iterator for PkSampler {
    type Item = Vec<usize>;

    fn next(&mut self) -> Option<Vec<usize>> {
        Some(self.next_batch())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn too_few_identities_is_an_error() {
        assert!(matches!(PkSampler::new(&[0, 0, 1], 3, 1, 0), Err(DataError::Sampler(_))));
    }

    #[test]
    fn restore_resumes_the_sequence() {
        let ids: Vec<usize> = (0..40).map(|i| i % 5).collect();
        let mut a = PkSampler::new(&ids, 3, 4, 9).unwrap();
        a.next_batch();
        let state = a.state();
        let expected: Vec<_> = (0..3).map(|_| a.next_batch()).collect();
        let mut b = PkSampler::new(&ids, 3, 4, 0).unwrap();
        b.restore(state);
        let got: Vec<_> = (0..3).map(|_| b.next_batch()).collect();
        assert_eq!(got, expected);
    }
}
