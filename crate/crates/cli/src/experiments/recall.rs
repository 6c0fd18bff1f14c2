//! Recall@k of block rankings against the true per-block attention mass.

use rayon::prelude::*;
use spla::oracle::true_group_block_scores;
use spla::selection::group_block_score;
use spla::{CacheLayout, Matrix, PagedKVCache, TaylorOrder};

use super::{sci, Report, RunOptions};
use crate::settings::{RecallSettings, Settings};
use crate::stats::{mean, recall, top_k_indices};
use crate::synthetic::{gaussian_blocks, query_group, rng_for};

pub const CSV_HEADER: &str = "trial,regime,recall_first,recall_second,recall_maxmin";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Regime {
    /// Per-block spread drawn log-uniformly from the configured range.
    Heterogeneous,
    /// Every key equals its block mean.
    Zero,
}

impl Regime {
    pub fn name(self) -> &'static str {
        match self {
            Regime::Heterogeneous => "heterogeneous",
            Regime::Zero => "zero",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RecallRow {
    pub trial: usize,
    pub regime: Regime,
    pub first: f64,
    pub second: f64,
    pub maxmin: f64,
    /// Whether both Taylor orders produced bit-identical block scores.
    pub orders_coincide: bool,
}

/// Per-dimension max/min bound: `sum_i max(q_i * max_i, q_i * min_i)`,
/// summed over the group's heads.
pub fn maxmin_scores(q_group: &Matrix, cache: &PagedKVCache) -> spla::Result<Vec<f64>> {
    let d = cache.head_dim();
    (0..cache.n_complete_blocks())
        .map(|b| {
            let mut hi = vec![f64::NEG_INFINITY; d];
            let mut lo = vec![f64::INFINITY; d];
            for k in cache.block_keys(b)? {
                for i in 0..d {
                    hi[i] = hi[i].max(k[i]);
                    lo[i] = lo[i].min(k[i]);
                }
            }
            Ok(q_group
                .iter_rows()
                .map(|q| (0..d).map(|i| (q[i] * hi[i]).max(q[i] * lo[i])).sum::<f64>())
                .sum())
        })
        .collect()
}

pub fn run_trial(
    trial: usize,
    regime: Regime,
    seed: u64,
    rs: &RecallSettings,
    top_k: usize,
) -> spla::Result<RecallRow> {
    let stream = match regime {
        Regime::Heterogeneous => 2 * trial as u64,
        Regime::Zero => 2 * trial as u64 + 1,
    };
    let mut rng = rng_for(seed, stream);
    let (_, q) = query_group(&mut rng, rs.group_size, rs.head_dim, rs.query_norm, 0.5);
    let spread = match regime {
        Regime::Heterogeneous => (rs.std_min, rs.std_max),
        Regime::Zero => (0.0, 0.0),
    };
    let data = gaussian_blocks(&mut rng, rs.n_blocks, rs.block_size, rs.head_dim, rs.mean_scale, spread);
    let layout = CacheLayout {
        head_dim: rs.head_dim,
        block_size: rs.block_size,
        window: rs.block_size,
        stride: rs.block_size,
    };
    let mut cache = PagedKVCache::new(layout);
    for (k, v) in data.keys.iter().zip(&data.values) {
        cache.append(k, v)?;
    }

    let truth = top_k_indices(&true_group_block_scores(&q, &cache)?, top_k);
    let first = group_block_score(&q, cache.block_summaries(), TaylorOrder::First)?;
    let second = group_block_score(&q, cache.block_summaries(), TaylorOrder::Second)?;
    let maxmin = maxmin_scores(&q, &cache)?;
    let orders_coincide = first.iter().zip(&second).all(|(a, b)| a.to_bits() == b.to_bits());
    Ok(RecallRow {
        trial,
        regime,
        first: recall(&top_k_indices(&first, top_k), &truth),
        second: recall(&top_k_indices(&second, top_k), &truth),
        maxmin: recall(&top_k_indices(&maxmin, top_k), &truth),
        orders_coincide,
    })
}

pub fn run(opts: &RunOptions, settings: &Settings) -> spla::Result<Report> {
    let mut rs = settings.recall.clone();
    if let Some(b) = opts.block_size {
        rs.block_size = b;
    }
    let top_k = opts.top_k.unwrap_or(rs.top_k);
    let trials = opts.trials.unwrap_or(rs.trials);
    let jobs: Vec<(usize, Regime)> = [Regime::Heterogeneous, Regime::Zero]
        .into_iter()
        .flat_map(|r| (0..trials).map(move |t| (t, r)))
        .collect();
    let rows = jobs
        .into_par_iter()
        .map(|(t, r)| run_trial(t, r, opts.seed, &rs, top_k))
        .collect::<spla::Result<Vec<_>>>()?;

    let mut csv = String::from(CSV_HEADER);
    csv.push('\n');
    for r in &rows {
        csv.push_str(&format!(
            "{},{},{},{},{}\n",
            r.trial,
            r.regime.name(),
            sci(r.first),
            sci(r.second),
            sci(r.maxmin)
        ));
    }
    let mut summary = Vec::new();
    for regime in [Regime::Heterogeneous, Regime::Zero] {
        let sel: Vec<&RecallRow> = rows.iter().filter(|r| r.regime == regime).collect();
        let m = |f: fn(&RecallRow) -> f64| mean(&sel.iter().map(|r| f(r)).collect::<Vec<_>>());
        let (f, s, x) = (m(|r| r.first), m(|r| r.second), m(|r| r.maxmin));
        csv.push_str(&format!("mean,{},{},{},{}\n", regime.name(), sci(f), sci(s), sci(x)));
        summary.push((regime, f, s, sel));
    }

    let mut report = Report::new(csv);
    for (regime, f, s, sel) in summary {
        match regime {
            Regime::Heterogeneous => report.check(
                s >= f,
                format!("heterogeneous: mean recall second {s:.4} >= first {f:.4}"),
            ),
            Regime::Zero => report.check(
                sel.iter().all(|r| r.orders_coincide && r.first == r.second),
                "zero variance: first and second order scores identical".to_string(),
            ),
        }
    }
    Ok(report)
}
