//! Retrieval metrics against an exhaustive ranking oracle.

mod common;

use common::{entry, oracle, random_instance};
use loga_harness::eval::{evaluate_entries, Entry, CMC_DEPTH};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn assert_matches_oracle(q: &[Entry], g: &[Entry]) {
    let r = evaluate_entries(q, g, 0);
    let o = oracle(q, g, CMC_DEPTH);
    assert_eq!(r.cmc, o.cmc);
    assert_eq!(r.map, o.map);
    assert_eq!(r.average_precision, o.ap);
    assert_eq!(r.excluded, o.excluded);
    assert_eq!(r.evaluated.len() + r.excluded, q.len());
}

#[test]
fn hand_case_average_precision_is_five_sixths() {
    let q = [entry(0, 0, vec![1.0, 0.0])];
    let g = [
        entry(0, 1, vec![1.0, 0.0]),
        entry(1, 1, vec![1.0, 0.5]),
        entry(0, 1, vec![0.0, 1.0]),
    ];
    let r = evaluate_entries(&q, &g, 0);
    assert_eq!(r.average_precision, [5.0 / 6.0]);
    assert_eq!(r.map, 5.0 / 6.0);
    assert_eq!(r.rank(1), Some(1.0));
}

#[test]
fn perfect_retrieval_scores_one() {
    let q: Vec<Entry> = (0..3).map(|i| entry(i, 0, (0..3).map(|d| (d == i) as u8 as f64).collect())).collect();
    let g: Vec<Entry> = (0..3).map(|i| entry(i, 1, (0..3).map(|d| (d == i) as u8 as f64).collect())).collect();
    let r = evaluate_entries(&q, &g, 0);
    assert_eq!(r.cmc[0], 1.0);
    assert_eq!(r.map, 1.0);
}

#[test]
fn same_camera_matches_are_removed_and_unmatched_queries_excluded() {
    let q = [entry(0, 0, vec![1.0, 0.0]), entry(5, 0, vec![1.0, 0.0])];
    let g = [
        // identical descriptor, same identity and camera: ignored
        entry(0, 0, vec![1.0, 0.0]),
        entry(1, 1, vec![0.9, 0.1]),
        entry(0, 1, vec![0.0, 1.0]),
    ];
    let r = evaluate_entries(&q, &g, 0);
    assert_eq!(r.excluded, 1);
    assert_eq!(r.evaluated, [0]);
    assert_eq!(r.average_precision, [0.5]);
    assert_eq!(r.rank(1), Some(0.0));
    assert_eq!(r.rank(2), Some(1.0));
}

#[test]
fn ties_break_by_gallery_position() {
    let q = [entry(0, 0, vec![1.0, 0.0])];
    let wrong_first = [entry(1, 1, vec![2.0, 0.0]), entry(0, 1, vec![3.0, 0.0])];
    assert_eq!(evaluate_entries(&q, &wrong_first, 0).map, 0.5);
    let right_first = [entry(0, 1, vec![3.0, 0.0]), entry(1, 1, vec![2.0, 0.0])];
    assert_eq!(evaluate_entries(&q, &right_first, 0).map, 1.0);
}

#[test]
fn cmc_extends_to_the_requested_depth() {
    let q = [entry(0, 0, vec![1.0])];
    let g = [entry(0, 1, vec![1.0])];
    assert_eq!(evaluate_entries(&q, &g, 5).cmc.len(), CMC_DEPTH);
    assert_eq!(evaluate_entries(&q, &g, 50).cmc.len(), 50);
    assert_eq!(evaluate_entries(&q, &g, 50).rank(50), Some(1.0));
}

#[test]
fn fifty_random_tiny_instances_match_the_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..50 {
        let (q, g) = random_instance(&mut rng);
        assert_matches_oracle(&q, &g);
    }
}

proptest! {
    #[test]
    fn metrics_match_oracle_and_cmc_is_monotone(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (q, g) = random_instance(&mut rng);
        assert_matches_oracle(&q, &g);
        let r = evaluate_entries(&q, &g, 0);
        prop_assert!(r.cmc.windows(2).all(|w| w[0] <= w[1]));
        prop_assert!(r.cmc.iter().all(|&c| (0.0..=1.0).contains(&c)));
        prop_assert!((0.0..=1.0).contains(&r.map));
    }
}
