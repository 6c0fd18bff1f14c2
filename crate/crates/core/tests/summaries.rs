mod common;

use common::*;
use proptest::prelude::*;
use spla::{compute_summary, Matrix, PagedKVCache};

/// Mean first, then squared deviations from that mean.
fn two_pass(keys: &Matrix) -> (Vec<f64>, Vec<f64>) {
    let n = keys.rows() as f64;
    let d = keys.cols();
    let mut mean = vec![0.0; d];
    for r in keys.iter_rows() {
        for i in 0..d {
            mean[i] += r[i];
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let mut var = vec![0.0; d];
    for r in keys.iter_rows() {
        for i in 0..d {
            var[i] += (r[i] - mean[i]).powi(2);
        }
    }
    var.iter_mut().for_each(|v| *v /= n);
    (mean, var)
}

#[test]
fn summary_matches_two_pass_oracle() {
    for seed in 0..20 {
        let mut r = rng(seed);
        let keys = gaussian_matrix(&mut r, 8, 4, 2.0);
        let s = compute_summary(&keys).unwrap();
        let (mean, var) = two_pass(&keys);
        for i in 0..4 {
            let tol = 1e-12 * mean[i].abs().max(1.0);
            assert!((s.mean[i] - mean[i]).abs() <= tol, "mean {i}");
            let tol = 1e-12 * var[i].abs().max(1e-300);
            assert!((s.diag_cov[i] - var[i]).abs() <= tol.max(1e-15), "var {i}");
        }
        assert_eq!(s.count, 8);
    }
}

#[test]
fn sorted_rows_give_identical_summaries() {
    let mut r = rng(3);
    let keys = gaussian_matrix(&mut r, 16, 3, 1.0);
    let mut rows: Vec<Vec<f64>> = keys.iter_rows().map(|x| x.to_vec()).collect();
    let mut shuffled = rows.clone();
    shuffled.reverse();
    rows.sort_by(|a, b| a.partial_cmp(b).unwrap());
    shuffled.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let a = compute_summary(&Matrix::from_rows(3, &rows).unwrap()).unwrap();
    let b = compute_summary(&Matrix::from_rows(3, &shuffled).unwrap()).unwrap();
    assert_eq!(a, b);
}

#[test]
fn appending_two_b_plus_three_tokens() {
    let cfg = small_config(4, 8, 4);
    let mut r = rng(1);
    let c = random_cache(&mut r, &cfg, 2 * 8 + 3, 1.0);
    assert_eq!(c.n_complete_blocks(), 2);
    assert_eq!(c.partial_len(), 3);
    assert_eq!(c.block_summaries().len(), 2);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn eager_summaries_are_recomputable(seed in 0u64..10_000, tokens in 0usize..70) {
        let cfg = small_config(3, 8, 4);
        let mut r = rng(seed);
        let c = random_cache(&mut r, &cfg, tokens, 1.5);
        let (blocks, windows) = c.rebuild_summaries().unwrap();
        prop_assert_eq!(blocks.as_slice(), c.block_summaries());
        prop_assert_eq!(windows.as_slice(), c.window_summaries());
        prop_assert_eq!(c.n_complete_blocks(), tokens / 8);
        prop_assert_eq!(c.window_summaries().len(), cfg.layout().window_count(tokens / 8));
        for s in c.block_summaries() {
            prop_assert!(s.diag_cov.iter().all(|&v| v >= 0.0));
        }
    }

    #[test]
    fn batch_append_matches_token_append(seed in 0u64..10_000, tokens in 1usize..40) {
        let cfg = small_config(2, 4, 2);
        let mut r = rng(seed);
        let k = gaussian_matrix(&mut r, tokens, 2, 1.0);
        let v = gaussian_matrix(&mut r, tokens, 2, 1.0);
        let mut a = PagedKVCache::new(cfg.layout());
        a.append_batch(&k, &v).unwrap();
        let mut b = PagedKVCache::new(cfg.layout());
        for (kr, vr) in k.iter_rows().zip(v.iter_rows()) {
            b.append(kr, vr).unwrap();
        }
        prop_assert_eq!(a, b);
    }

    #[test]
    fn summary_without_spread_has_zero_variance(x in prop::collection::vec(-10.0f64..10.0, 1..6), n in 1usize..9) {
        let rows = vec![x.clone(); n];
        let s = compute_summary(&Matrix::from_rows(x.len(), &rows).unwrap()).unwrap();
        prop_assert!(s.diag_cov.iter().all(|&v| v.abs() < 1e-12));
    }
}
