//! Truncation and overlap baselines sharing the SPLA code paths.
//!
//! * InfLLM-v2 style truncation: first-order selection, sparse branch only.
//! * SPA: second-order selection, sparse branch only (SPLA without the
//!   residual branch).
//! * NSA style overlap: first-order selection plus a compressed branch that
//!   attends to one mean pseudo-token per complete block, selected blocks
//!   included. Branches are summed without gates.

use crate::config::AttentionConfig;
use crate::error::Result;
use crate::ledger::IoLedger;
use crate::oracle::softmax;
use crate::selection::{select_blocks, TaylorOrder};
use crate::spla::{spla_attend, SplaState};
use crate::sparse::sparse_attention_fused;
use crate::tensor::{axpy, dot, Matrix};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Strategy {
    Spla,
    Spa,
    InfLlmV2,
    NsaOverlap,
}

impl Strategy {
    pub const ALL: [Strategy; 4] = [
        Strategy::Spla,
        Strategy::Spa,
        Strategy::InfLlmV2,
        Strategy::NsaOverlap,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Strategy::Spla => "spla",
            Strategy::Spa => "spa",
            Strategy::InfLlmV2 => "infllm_v2",
            Strategy::NsaOverlap => "nsa_overlap",
        }
    }
}

/// Evaluates `strategy` for the query group against the current state.
pub fn attend(
    strategy: Strategy,
    state: &SplaState,
    q_group: &Matrix,
    config: &AttentionConfig,
    ledger: &mut IoLedger,
) -> Result<Matrix> {
    match strategy {
        Strategy::Spla => Ok(spla_attend(state, q_group, config, ledger)?.output),
        Strategy::Spa => truncated(state, q_group, config, TaylorOrder::Second, ledger),
        Strategy::InfLlmV2 => infllm_v2_step(state, q_group, config, ledger),
        Strategy::NsaOverlap => nsa_overlap_step(state, q_group, config, ledger),
    }
}

fn truncated(
    state: &SplaState,
    q_group: &Matrix,
    config: &AttentionConfig,
    order: TaylorOrder,
    ledger: &mut IoLedger,
) -> Result<Matrix> {
    let q_group = q_group.map(|x| config.precision.quantize(x));
    let selection = select_blocks(&q_group, &state.cache, config, order, ledger)?;
    Ok(sparse_attention_fused(&q_group, &state.cache, &selection, config, ledger)?.o_sparse)
}

/// Truncation baseline: unselected blocks contribute nothing.
pub fn infllm_v2_step(
    state: &SplaState,
    q_group: &Matrix,
    config: &AttentionConfig,
    ledger: &mut IoLedger,
) -> Result<Matrix> {
    truncated(state, q_group, config, TaylorOrder::First, ledger)
}

/// Output of the overlap baseline split by branch.
#[derive(Debug, Clone)]
pub struct OverlapBreakdown {
    pub o_sparse: Matrix,
    /// Attention over block-mean pseudo-tokens; zero when no block is complete.
    pub o_compressed: Matrix,
    pub output: Matrix,
}

/// Softmax attention of each query against every complete block's key mean,
/// with the block's value mean as the pseudo-token value. Charges the key
/// and value means as summary traffic.
pub fn compressed_branch(
    state: &SplaState,
    q_group: &Matrix,
    ledger: &mut IoLedger,
) -> Matrix {
    let cache = &state.cache;
    let d = cache.head_dim();
    let nb = cache.n_complete_blocks();
    let mut out = Matrix::zeros(q_group.rows(), d);
    if nb == 0 {
        return out;
    }
    ledger.charge_summary((nb * 2 * d) as u64);
    for (h, q) in q_group.iter_rows().enumerate() {
        let scores: Vec<f64> = cache
            .block_summaries()
            .iter()
            .map(|s| dot(q, &s.mean))
            .collect();
        let w = softmax(&scores);
        let row = out.row_mut(h);
        for (wi, v) in w.iter().zip(cache.value_means()) {
            axpy(row, *wi, v);
        }
    }
    out
}

pub fn nsa_overlap_breakdown(
    state: &SplaState,
    q_group: &Matrix,
    config: &AttentionConfig,
    ledger: &mut IoLedger,
) -> Result<OverlapBreakdown> {
    let q_group = q_group.map(|x| config.precision.quantize(x));
    let selection = select_blocks(&q_group, &state.cache, config, TaylorOrder::First, ledger)?;
    let o_sparse = sparse_attention_fused(&q_group, &state.cache, &selection, config, ledger)?.o_sparse;
    let o_compressed = compressed_branch(state, &q_group, ledger);
    let mut output = o_sparse.clone();
    for h in 0..output.rows() {
        axpy(output.row_mut(h), 1.0, o_compressed.row(h));
    }
    Ok(OverlapBreakdown {
        o_sparse,
        o_compressed,
        output,
    })
}

/// Overlap baseline: sparse branch plus the compressed branch over all
/// blocks.
pub fn nsa_overlap_step(
    state: &SplaState,
    q_group: &Matrix,
    config: &AttentionConfig,
    ledger: &mut IoLedger,
) -> Result<Matrix> {
    Ok(nsa_overlap_breakdown(state, q_group, config, ledger)?.output)
}
