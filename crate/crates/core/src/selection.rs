//! Block selection from key statistics.
//!
//! A block's relevance is its share of the attention mass, estimated by
//! expanding `E[exp(q . k)]` around the block mean. The first-order estimate
//! is `exp(q . mean)`; the second-order estimate multiplies in
//! `1 + 0.5 * sum_i q_i^2 var_i` using the diagonal covariance.

use crate::cache::{BlockSummary, PagedKVCache};
use crate::config::{AttentionConfig, CacheLayout, ScoreGranularity};
use crate::error::{check_len, Result, SplaError};
use crate::ledger::IoLedger;
use crate::tensor::{dot, Matrix};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TaylorOrder {
    First,
    #[default]
    Second,
}

impl TaylorOrder {
    /// Summary scalars read per summary: the mean, plus the variance for
    /// second order.
    pub fn summary_width(self, dim: usize) -> usize {
        match self {
            TaylorOrder::First => dim,
            TaylorOrder::Second => 2 * dim,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SelectionResult {
    /// Selected block indices, ascending.
    pub indices: Vec<usize>,
    /// Pooled group score of every complete block.
    pub block_scores: Vec<f64>,
}

impl SelectionResult {
    pub fn is_selected(&self, b: usize) -> bool {
        self.indices.binary_search(&b).is_ok()
    }

    /// Complete blocks not in `indices`, ascending.
    pub fn complement(&self, n_blocks: usize) -> Vec<usize> {
        (0..n_blocks).filter(|&b| !self.is_selected(b)).collect()
    }
}

/// `ln` of the Taylor estimate of `E[exp(q . k)]` over the summarized span.
pub fn log_taylor_score(q: &[f64], summary: &BlockSummary, order: TaylorOrder) -> f64 {
    let first = dot(q, &summary.mean);
    match order {
        TaylorOrder::First => first,
        TaylorOrder::Second => {
            let quad: f64 = q
                .iter()
                .zip(&summary.diag_cov)
                .map(|(qi, vi)| qi * qi * vi)
                .sum();
            first + (0.5 * quad).ln_1p()
        }
    }
}

pub fn taylor_score_first(q: &[f64], summary: &BlockSummary) -> f64 {
    log_taylor_score(q, summary, TaylorOrder::First).exp()
}

pub fn taylor_score_second(q: &[f64], summary: &BlockSummary) -> f64 {
    let quad: f64 = q
        .iter()
        .zip(&summary.diag_cov)
        .map(|(qi, vi)| qi * qi * vi)
        .sum();
    dot(q, &summary.mean).exp() * (1.0 + 0.5 * quad)
}

/// Per-head normalized mass estimates summed over the query group.
///
/// For head `m`, summary `i` gets `count_i * tau(q_m, s_i) / Z_m` with `Z_m`
/// the same quantity summed over all summaries. Computed in log space with a
/// per-head max shift.
pub fn group_block_score(
    q_group: &Matrix,
    summaries: &[BlockSummary],
    order: TaylorOrder,
) -> Result<Vec<f64>> {
    if summaries.is_empty() {
        return Err(SplaError::EmptySpan);
    }
    let d = summaries[0].dim();
    check_len("query width", d, q_group.cols())?;
    let mut out = vec![0.0; summaries.len()];
    let mut logs = vec![0.0; summaries.len()];
    for (head, q) in q_group.iter_rows().enumerate() {
        for (l, s) in logs.iter_mut().zip(summaries) {
            *l = (s.count as f64).ln() + log_taylor_score(q, s, order);
        }
        let shift = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = logs.iter().map(|l| (l - shift).exp()).sum();
        if !(z.is_finite() && z > 0.0) || !shift.is_finite() {
            return Err(SplaError::DegenerateDistribution {
                head,
                normalizer: z,
            });
        }
        for (o, l) in out.iter_mut().zip(&logs) {
            *o += (l - shift).exp() / z;
        }
    }
    Ok(out)
}

/// Max-pools window scores onto the blocks their spans intersect.
pub fn pool_windows_to_blocks(
    window_scores: &[f64],
    layout: &CacheLayout,
    n_blocks: usize,
) -> Result<Vec<f64>> {
    check_len(
        "window scores",
        layout.window_count(n_blocks),
        window_scores.len(),
    )?;
    Ok((0..n_blocks)
        .map(|b| {
            window_scores[layout.windows_of_block(b, n_blocks)]
                .iter()
                .copied()
                .fold(f64::NEG_INFINITY, f64::max)
        })
        .collect())
}

/// Top-k with forced sink and recent blocks. Ties go to the lower index.
pub fn select_topk(block_scores: &[f64], config: &AttentionConfig, n_blocks: usize) -> SelectionResult {
    debug_assert_eq!(block_scores.len(), n_blocks);
    let mut chosen = vec![false; n_blocks];
    chosen[..config.n_sink.min(n_blocks)].fill(true);
    chosen[n_blocks.saturating_sub(config.n_recent)..].fill(true);
    let mut taken = chosen.iter().filter(|&&c| c).count();
    let budget = config.top_k.min(n_blocks);
    if taken < budget {
        let mut order: Vec<usize> = (0..n_blocks).filter(|&b| !chosen[b]).collect();
        order.sort_by(|&a, &b| {
            block_scores[b]
                .partial_cmp(&block_scores[a])
                .unwrap_or(std::cmp::Ordering::Equal)
                .then(a.cmp(&b))
        });
        for b in order {
            if taken == budget {
                break;
            }
            chosen[b] = true;
            taken += 1;
        }
    }
    SelectionResult {
        indices: (0..n_blocks).filter(|&b| chosen[b]).collect(),
        block_scores: block_scores.to_vec(),
    }
}

/// Scores the cache's summaries for the query group and picks blocks.
///
/// Reads only summaries: `ledger.summary_elements` grows by one summary width
/// per scored summary and nothing else is charged. With no complete blocks
/// the selection is empty.
pub fn select_blocks(
    q_group: &Matrix,
    cache: &PagedKVCache,
    config: &AttentionConfig,
    order: TaylorOrder,
    ledger: &mut IoLedger,
) -> Result<SelectionResult> {
    let nb = cache.n_complete_blocks();
    if nb == 0 {
        return Ok(SelectionResult::default());
    }
    let summaries = match config.granularity {
        ScoreGranularity::Windows => cache.window_summaries(),
        ScoreGranularity::Blocks => cache.block_summaries(),
    };
    ledger.charge_summary((summaries.len() * order.summary_width(cache.head_dim())) as u64);
    let scores = group_block_score(q_group, summaries, order)?;
    let block_scores = match config.granularity {
        ScoreGranularity::Windows => pool_windows_to_blocks(&scores, &cache.layout(), nb)?,
        ScoreGranularity::Blocks => scores,
    };
    Ok(select_topk(&block_scores, config, nb))
}
