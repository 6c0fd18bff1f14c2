mod common;

use common::*;
use proptest::prelude::*;
use spla::oracle::{dense_attention, true_block_mass, true_block_masses};
use spla::Matrix;

/// Two nested loops with compensated sums; no shared code with the library.
fn naive_attention(q: &Matrix, k: &Matrix, v: &Matrix) -> Matrix {
    let mut out = Matrix::zeros(q.rows(), v.cols());
    for g in 0..q.rows() {
        let scores: Vec<f64> = (0..k.rows()).map(|i| kahan_dot(q.row(g), k.row(i))).collect();
        let m = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = scores.iter().map(|s| (s - m).exp()).collect();
        let z = kahan_dot(&e, &vec![1.0; e.len()]);
        for j in 0..v.cols() {
            let col: Vec<f64> = (0..v.rows()).map(|i| v.row(i)[j]).collect();
            out.row_mut(g)[j] = kahan_dot(&e, &col) / z;
        }
    }
    out
}

#[test]
fn dense_matches_naive_double_loop() {
    for seed in 0..10 {
        let mut r = rng(seed);
        let q = gaussian_matrix(&mut r, 2, 4, 1.0);
        let k = gaussian_matrix(&mut r, 16, 4, 1.0);
        let v = gaussian_matrix(&mut r, 16, 4, 1.0);
        let got = dense_attention(&q, &k, &v).unwrap();
        let want = naive_attention(&q, &k, &v);
        assert!(got.max_abs_diff(&want) <= 1e-6);
        assert!(got.max_abs_diff(&want) <= 1e-12);
    }
}

#[test]
fn block_mass_is_count_times_mean_score() {
    let mut r = rng(9);
    let q = gaussian_vec(&mut r, 6, 0.5);
    let block = gaussian_matrix(&mut r, 11, 6, 1.0);
    let mass = true_block_mass(&q, block.iter_rows(), 0.0);
    let mean_exp: f64 = block.iter_rows().map(|k| kahan_dot(&q, k).exp()).sum::<f64>() / 11.0;
    assert!((mass - 11.0 * mean_exp).abs() <= 1e-12 * mass);
}

#[test]
fn block_masses_sum_to_dense_normalizer() {
    for seed in 0..10 {
        let cfg = small_config(8, 8, 4);
        let mut r = rng(100 + seed);
        let cache = random_cache(&mut r, &cfg, 8 * 7, 1.0);
        let q = gaussian_vec(&mut r, 8, 1.0);
        let (masses, shift) = true_block_masses(&q, &cache).unwrap();
        let z: f64 = cache.tokens().map(|(k, _)| (kahan_dot(&q, k) - shift).exp()).sum();
        let total: f64 = masses.iter().sum();
        assert!((total - z).abs() <= 1e-10 * z);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn dense_output_within_value_envelope(seed in 0u64..100_000, n in 1usize..24) {
        let mut r = rng(seed);
        let q = gaussian_matrix(&mut r, 3, 5, 2.0);
        let k = gaussian_matrix(&mut r, n, 5, 2.0);
        let v = gaussian_matrix(&mut r, n, 5, 1.0);
        let o = dense_attention(&q, &k, &v).unwrap();
        for g in 0..3 {
            for j in 0..5 {
                let lo = v.iter_rows().map(|r| r[j]).fold(f64::INFINITY, f64::min);
                let hi = v.iter_rows().map(|r| r[j]).fold(f64::NEG_INFINITY, f64::max);
                let x = o.row(g)[j];
                prop_assert!(x >= lo - 1e-12 && x <= hi + 1e-12);
            }
        }
    }

    #[test]
    fn softmax_weights_ignore_score_offsets(scores in prop::collection::vec(-50.0f64..50.0, 1..20), c in -100.0f64..100.0) {
        let a = spla::oracle::softmax(&scores);
        let shifted: Vec<f64> = scores.iter().map(|s| s + c).collect();
        let b = spla::oracle::softmax(&shifted);
        for (x, y) in a.iter().zip(&b) {
            prop_assert!((x - y).abs() <= 1e-12);
        }
    }
}
