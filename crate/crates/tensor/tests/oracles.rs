//! Forward kernels against independent brute-force oracles.

use loga_tensor::kernels::{conv1d, matmul, mean_axis, softmax};
use loga_tensor::{BatchNormMode, BnStats, Graph, Tensor};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.gen_range(-1.0..1.0))
}

fn matmul_oracle(a: &Tensor<f64>, b: &Tensor<f64>) -> Vec<f64> {
    let (m, k) = (a.shape()[0], a.shape()[1]);
    let n = b.shape()[1];
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for j in 0..n {
            for p in 0..k {
                out[i * n + j] += a.at2(i, p) * b.at2(p, j);
            }
        }
    }
    out
}

fn conv1d_oracle(x: &Tensor<f64>, k: &Tensor<f64>, stride: usize) -> Vec<Vec<f64>> {
    let (cin, w) = (x.shape()[0], x.shape()[1]);
    let (cout, s) = (k.shape()[0], k.shape()[2]);
    let mut rows = Vec::new();
    for o in 0..cout {
        let mut row = Vec::new();
        let mut start = 0;
        while start + s <= w {
            let mut acc = 0.0;
            for c in 0..cin {
                for t in 0..s {
                    acc += k.data()[(o * cin + c) * s + t] * x.data()[c * w + start + t];
                }
            }
            row.push(acc);
            start += stride;
        }
        rows.push(row);
    }
    rows
}

#[test]
fn matmul_matches_triple_loop() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let a = random(&mut rng, &[3, 4]);
    let b = random(&mut rng, &[4, 2]);
    let got = matmul(&a, &b).unwrap();
    for (g, o) in got.data().iter().zip(matmul_oracle(&a, &b)) {
        assert!((g - o).abs() < 1e-6);
    }
}

#[test]
fn conv1d_documented_case() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let x = random(&mut rng, &[3, 12]);
    let k = random(&mut rng, &[2, 3, 4]);
    let got = conv1d(&x, &k, 4).unwrap();
    assert_eq!(got.shape(), &[2, 3]);
    let oracle: Vec<f64> = conv1d_oracle(&x, &k, 4).concat();
    for (g, o) in got.data().iter().zip(oracle) {
        assert!((g - o).abs() < 1e-6);
    }
}

#[test]
fn softmax_matches_direct_formula() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let x = random(&mut rng, &[10]).map(|v| v * 5.0);
    let total: f64 = x.data().iter().map(|v| v.exp()).sum();
    for (g, v) in softmax(&x).data().iter().zip(x.data()) {
        assert!((g - v.exp() / total).abs() < 1e-9);
    }
}

#[test]
fn mean_pool_matches_summation() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let x = random(&mut rng, &[7, 5]);
    let got = mean_axis(&x, 0).unwrap();
    for j in 0..5 {
        let mean: f64 = (0..7).map(|i| x.at2(i, j)).sum::<f64>() / 7.0;
        assert!((got.data()[j] - mean).abs() < 1e-9);
    }
}

#[test]
fn batch_norm_eval_converges_to_train_after_identical_batches() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let x = random(&mut rng, &[3, 6]).map(|v| 2.0 * v + 0.7);
    let mut stats = BnStats::new(3);
    let mut train_out = None;
    for _ in 0..200 {
        let mut g = Graph::<f64>::new();
        let xv = g.constant(x.clone());
        let sc = g.constant(Tensor::ones([3]));
        let sh = g.constant(Tensor::zeros([3]));
        let y = g.batch_norm(xv, sc, sh, &mut stats, BatchNormMode::Train).unwrap();
        train_out = Some(g.value(y).clone());
    }
    let mut g = Graph::<f64>::new();
    let xv = g.constant(x);
    let sc = g.constant(Tensor::ones([3]));
    let sh = g.constant(Tensor::zeros([3]));
    let y = g.batch_norm(xv, sc, sh, &mut stats, BatchNormMode::Eval).unwrap();
    let diff = g.value(y).max_abs_diff(&train_out.unwrap());
    assert!(diff < 1e-3, "eval/train gap {diff}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn conv1d_equals_sliding_window(
        cin in 1usize..=4, cout in 1usize..=4, span in 1usize..=8,
        extra in 0usize..=24, stride in 1usize..=4, seed in any::<u64>()
    ) {
        let width = span + extra;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = random(&mut rng, &[cin, width]);
        let k = random(&mut rng, &[cout, cin, span]);
        let got = conv1d(&x, &k, stride).unwrap();
        let oracle = conv1d_oracle(&x, &k, stride);
        prop_assert_eq!(got.shape(), &[cout, oracle[0].len()]);
        for (g, o) in got.data().iter().zip(oracle.concat()) {
            prop_assert!((g - o).abs() < 1e-9);
        }
    }

    #[test]
    fn softmax_normalized_and_shift_invariant(
        logits in prop::collection::vec(-30.0f64..30.0, 1..16), shift in -50.0f64..50.0
    ) {
        let x = Tensor::<f64>::new([logits.len()], logits.clone()).unwrap();
        let y = softmax(&x);
        prop_assert!((y.sum() - 1.0).abs() < 1e-6);
        // a gap above ~37 rounds the larger probability to exactly 1
        prop_assert!(y.data().iter().all(|&v| v > 0.0 && v <= 1.0));
        let shifted = softmax(&x.map(|v| v + shift));
        prop_assert!(y.max_abs_diff(&shifted) < 1e-6);
    }

    #[test]
    fn identity_matmul_is_identity(r in 1usize..6, c in 1usize..6, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = random(&mut rng, &[r, c]);
        let got = matmul(&Tensor::eye(r), &a).unwrap();
        prop_assert!(got.max_abs_diff(&a) < 1e-7);
    }

    #[test]
    fn matmul_equals_triple_loop_f32(
        m in 1usize..6, k in 1usize..6, n in 1usize..6, seed in any::<u64>()
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = random(&mut rng, &[m, k]);
        let b = random(&mut rng, &[k, n]);
        let (a32, b32) = (a.cast::<f32>(), b.cast::<f32>());
        let got = matmul(&a32, &b32).unwrap();
        for (g, o) in got.data().iter().zip(matmul_oracle(&a32.cast(), &b32.cast())) {
            prop_assert!((*g as f64 - o).abs() < 1e-6);
        }
    }
}
