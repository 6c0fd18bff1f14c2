mod common;

use common::*;
use proptest::prelude::*;
use spla::oracle::true_group_block_scores;
use spla::selection::{
    group_block_score, pool_windows_to_blocks, select_blocks, select_topk, taylor_score_first,
    taylor_score_second, TaylorOrder,
};
use spla::{AttentionConfig, BlockSummary, IoLedger, Matrix, PagedKVCache};

#[test]
fn log_first_order_is_mean_dot_product() {
    let mut r = rng(5);
    for _ in 0..20 {
        let q = gaussian_vec(&mut r, 7, 1.0);
        let mean = gaussian_vec(&mut r, 7, 1.0);
        let s = BlockSummary { mean: mean.clone(), diag_cov: vec![0.3; 7], count: 4 };
        assert!((taylor_score_first(&q, &s).ln() - kahan_dot(&q, &mean)).abs() <= 1e-12);
    }
}

#[test]
fn group_scores_match_per_head_loop() {
    let mut r = rng(11);
    let summaries: Vec<BlockSummary> = (0..9)
        .map(|i| BlockSummary {
            mean: gaussian_vec(&mut r, 5, 1.0),
            diag_cov: gaussian_vec(&mut r, 5, 0.5).into_iter().map(|x| x * x).collect(),
            count: 4 + i % 3,
        })
        .collect();
    let q = gaussian_matrix(&mut r, 2, 5, 1.0);
    for order in [TaylorOrder::First, TaylorOrder::Second] {
        let got = group_block_score(&q, &summaries, order).unwrap();
        let mut want = vec![0.0; summaries.len()];
        for h in 0..2 {
            let qh = q.row(h);
            let raw: Vec<f64> = summaries
                .iter()
                .map(|s| {
                    let t = match order {
                        TaylorOrder::First => taylor_score_first(qh, s),
                        TaylorOrder::Second => taylor_score_second(qh, s),
                    };
                    s.count as f64 * t
                })
                .collect();
            let z: f64 = raw.iter().sum();
            for (w, x) in want.iter_mut().zip(&raw) {
                *w += x / z;
            }
        }
        for (a, b) in got.iter().zip(&want) {
            assert!((a - b).abs() <= 1e-10, "{order:?}: {a} vs {b}");
        }
        assert!((got.iter().sum::<f64>() - 2.0).abs() < 1e-12);
    }
}

/// Max over windows whose explicit token span intersects the block span.
fn pool_by_intervals(scores: &[f64], cfg: &AttentionConfig, nb: usize) -> Vec<f64> {
    (0..nb)
        .map(|b| {
            let (blo, bhi) = (b * cfg.block_size, (b + 1) * cfg.block_size);
            scores
                .iter()
                .enumerate()
                .filter(|(j, _)| {
                    let (wlo, whi) = (j * cfg.stride, j * cfg.stride + cfg.window);
                    wlo < bhi && whi > blo
                })
                .map(|(_, &s)| s)
                .fold(f64::NEG_INFINITY, f64::max)
        })
        .collect()
}

#[test]
fn pooling_matches_interval_oracle_default_geometry() {
    let cfg = AttentionConfig::default();
    let nb = 6;
    let layout = cfg.layout();
    let nw = layout.window_count(nb);
    let mut r = rng(2);
    let scores = gaussian_vec(&mut r, nw, 1.0);
    assert_eq!(pool_windows_to_blocks(&scores, &layout, nb).unwrap(), pool_by_intervals(&scores, &cfg, nb));
    // interior blocks pool windows 8b-1 ..= 8b+7
    for b in 1..nb - 1 {
        assert_eq!(layout.windows_of_block(b, nb), (8 * b - 1)..(8 * b + 8));
    }
    assert_eq!(layout.windows_of_block(0, nb), 0..8);
    assert_eq!(layout.windows_of_block(nb - 1, nb), (8 * (nb - 1) - 1)..nw);
}

/// Forced blocks first, then a stable sort by (score desc, index asc).
fn topk_oracle(scores: &[f64], cfg: &AttentionConfig) -> Vec<usize> {
    let n = scores.len();
    let mut forced: Vec<usize> = (0..cfg.n_sink.min(n)).collect();
    forced.extend(n.saturating_sub(cfg.n_recent)..n);
    forced.sort_unstable();
    forced.dedup();
    let mut rest: Vec<(usize, f64)> = (0..n).filter(|b| !forced.contains(b)).map(|b| (b, scores[b])).collect();
    rest.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
    let budget = cfg.top_k.min(n).saturating_sub(forced.len());
    forced.extend(rest.into_iter().take(budget).map(|(b, _)| b));
    forced.sort_unstable();
    forced
}

#[test]
fn planted_block_is_selected() {
    let cfg = AttentionConfig { head_dim: 16, group_size: 2, block_size: 16, window: 8, stride: 4, top_k: 4, n_sink: 1, n_recent: 1, ..Default::default() };
    for seed in 0..10 {
        let mut r = rng(seed);
        let qdir = gaussian_vec(&mut r, 16, 1.0);
        let norm = qdir.iter().map(|x| x * x).sum::<f64>().sqrt();
        let qdir: Vec<f64> = qdir.iter().map(|x| x / norm).collect();
        let planted = 5;
        let mut cache = PagedKVCache::new(cfg.layout());
        for b in 0..12 {
            for _ in 0..16 {
                let mut k = gaussian_vec(&mut r, 16, 0.3);
                // remove the query component from noise blocks
                let p = kahan_dot(&k, &qdir);
                k.iter_mut().zip(&qdir).for_each(|(x, u)| *x -= p * u);
                if b == planted {
                    k.iter_mut().zip(&qdir).for_each(|(x, u)| *x += 3.0 * u);
                }
                cache.append(&k, &gaussian_vec(&mut r, 16, 1.0)).unwrap();
            }
        }
        let q = Matrix::from_rows(16, &[qdir.clone(), qdir.iter().map(|x| x * 1.1).collect()]).unwrap();
        let truth = true_group_block_scores(&q, &cache).unwrap();
        let others = truth.iter().enumerate().filter(|(b, _)| *b != planted).map(|(_, &m)| m).fold(0.0, f64::max);
        assert!(truth[planted] >= 10.0 * others);
        let sel = select_blocks(&q, &cache, &cfg, TaylorOrder::Second, &mut IoLedger::new()).unwrap();
        assert!(sel.is_selected(planted), "seed {seed}: {:?}", sel.indices);
    }
}

#[test]
fn identical_blocks_fall_back_to_tie_rule() {
    let cfg = small_config(4, 8, 4);
    let mut cache = PagedKVCache::new(cfg.layout());
    let mut r = rng(0);
    let block: Vec<Vec<f64>> = (0..8).map(|_| gaussian_vec(&mut r, 4, 1.0)).collect();
    for _ in 0..6 {
        for k in &block {
            cache.append(k, k).unwrap();
        }
    }
    let q = gaussian_matrix(&mut r, 2, 4, 1.0);
    let mut cfg_b = cfg.clone();
    cfg_b.granularity = spla::ScoreGranularity::Blocks;
    let sel = select_blocks(&q, &cache, &cfg_b, TaylorOrder::Second, &mut IoLedger::new()).unwrap();
    assert_eq!(sel.indices, vec![0, 1, 2, 5]);
}

#[test]
fn budget_covering_all_blocks_selects_everything() {
    let cfg = small_config(4, 8, 8);
    let mut r = rng(4);
    let cache = random_cache(&mut r, &cfg, 8 * 6 + 2, 1.0);
    let q = gaussian_matrix(&mut r, 2, 4, 1.0);
    let sel = select_blocks(&q, &cache, &cfg, TaylorOrder::Second, &mut IoLedger::new()).unwrap();
    assert_eq!(sel.indices, (0..6).collect::<Vec<_>>());
}

#[test]
fn selection_reads_summaries_only() {
    let cfg = small_config(8, 8, 3);
    let mut r = rng(7);
    let cache = random_cache(&mut r, &cfg, 8 * 10 + 5, 1.0);
    let q = gaussian_matrix(&mut r, 2, 8, 1.0);
    let mut l = IoLedger::new();
    select_blocks(&q, &cache, &cfg, TaylorOrder::Second, &mut l).unwrap();
    assert_eq!(l.exact_kv_elements, 0);
    assert_eq!(l.state_elements, 0);
    assert_eq!(l.summary_elements, (cache.window_summaries().len() * 2 * 8) as u64);
}

#[test]
fn no_complete_blocks_skips_selection() {
    let cfg = small_config(4, 8, 3);
    let mut r = rng(8);
    let cache = random_cache(&mut r, &cfg, 5, 1.0);
    let mut l = IoLedger::new();
    let sel = select_blocks(&gaussian_matrix(&mut r, 2, 4, 1.0), &cache, &cfg, TaylorOrder::Second, &mut l).unwrap();
    assert!(sel.indices.is_empty());
    assert_eq!(l, IoLedger::new());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn topk_matches_sort_oracle(
        scores in prop::collection::vec(0u8..6, 1..40),
        k in 2usize..10,
        sink in 0usize..2,
        recent in 0usize..2,
    ) {
        // coarse integer scores force many ties
        let scores: Vec<f64> = scores.into_iter().map(|s| s as f64 * 0.1).collect();
        let cfg = AttentionConfig { top_k: k, n_sink: sink, n_recent: recent, ..Default::default() };
        let got = select_topk(&scores, &cfg, scores.len());
        prop_assert_eq!(&got.indices, &topk_oracle(&scores, &cfg));
        prop_assert_eq!(got.indices.len(), k.min(scores.len()));
        // ranking invariance under positive rescaling
        let scaled: Vec<f64> = scores.iter().map(|s| s * 3.7).collect();
        prop_assert_eq!(select_topk(&scaled, &cfg, scores.len()).indices, got.indices);
    }

    #[test]
    fn second_order_never_below_first(
        q in prop::collection::vec(-3.0f64..3.0, 4),
        mean in prop::collection::vec(-3.0f64..3.0, 4),
        var in prop::collection::vec(0.0f64..4.0, 4),
    ) {
        let s = BlockSummary { mean, diag_cov: var, count: 3 };
        prop_assert!(taylor_score_second(&q, &s) >= taylor_score_first(&q, &s));
    }

    #[test]
    fn pooling_matches_intervals(seed in 0u64..10_000, nb in 1usize..12, geometry in 0usize..3) {
        let (b, c, s) = [(8, 4, 2), (16, 8, 4), (8, 8, 8)][geometry];
        let cfg = AttentionConfig { block_size: b, window: c, stride: s, top_k: 2, n_sink: 1, n_recent: 1, ..Default::default() };
        let mut r = rng(seed);
        let scores = gaussian_vec(&mut r, cfg.layout().window_count(nb), 1.0);
        prop_assert_eq!(pool_windows_to_blocks(&scores, &cfg.layout(), nb).unwrap(), pool_by_intervals(&scores, &cfg, nb));
    }
}
