//! Sparse plus linear attention: exact attention over selected blocks and
//! an RMS-normalized residual linear attention over the rest.

use sha2::{Digest, Sha256};

use crate::cache::PagedKVCache;
use crate::config::AttentionConfig;
use crate::error::{check_len, Result};
use crate::ledger::IoLedger;
use crate::rla::{global_state_update, rla_subtract_group, LinearState};
use crate::selection::{select_blocks, SelectionResult, TaylorOrder};
use crate::sparse::sparse_attention_fused;
use crate::tensor::Matrix;

pub const RMS_EPS: f64 = 1e-6;

/// `x / sqrt(mean(x^2) + eps) * scale`
pub fn rms_norm(x: &[f64], scale: &[f64]) -> Vec<f64> {
    debug_assert_eq!(x.len(), scale.len());
    let ms = x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64;
    let inv = 1.0 / (ms + RMS_EPS).sqrt();
    x.iter().zip(scale).map(|(v, s)| v * inv * s).collect()
}

/// Decode state of one KV head: its cache, the global linear state over all
/// complete blocks, and the RMS scale of the residual branch.
#[derive(Debug, Clone)]
pub struct SplaState {
    pub cache: PagedKVCache,
    pub global_state: LinearState,
    pub rms_scale: Vec<f64>,
}

impl SplaState {
    pub fn new(config: &AttentionConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            cache: PagedKVCache::new(config.layout()),
            global_state: LinearState::zeros(config.head_dim, config.precision),
            rms_scale: vec![1.0; config.head_dim],
        })
    }

    pub fn with_rms_scale(mut self, scale: Vec<f64>) -> Result<Self> {
        check_len("rms scale", self.cache.head_dim(), scale.len())?;
        self.rms_scale = scale;
        Ok(self)
    }

    /// Appends one token. When it completes a block, the block's tokens are
    /// folded into the global state in order, so the global state always
    /// covers exactly the complete blocks.
    pub fn append(&mut self, key: &[f64], value: &[f64], config: &AttentionConfig) -> Result<()> {
        let p = config.precision;
        let (key, value) = (p.quantize_vec(key), p.quantize_vec(value));
        let outcome = self.cache.append(&key, &value)?;
        if let Some(b) = outcome.completed_block {
            for (k, v) in self.cache.block_tokens(b)? {
                global_state_update(&mut self.global_state, k, v, config.feature_map)?;
            }
        }
        Ok(())
    }
}

/// Intermediate results of one SPLA evaluation.
#[derive(Debug, Clone)]
pub struct SplaBreakdown {
    pub selection: SelectionResult,
    pub o_sparse: Matrix,
    /// Residual before normalization, `G x d`.
    pub o_rla: Matrix,
    pub output: Matrix,
}

/// Evaluates SPLA for the query group against the current state.
pub fn spla_attend(
    state: &SplaState,
    q_group: &Matrix,
    config: &AttentionConfig,
    ledger: &mut IoLedger,
) -> Result<SplaBreakdown> {
    spla_attend_with(state, q_group, config, TaylorOrder::Second, ledger)
}

/// [`spla_attend`] with an explicit selection order.
pub fn spla_attend_with(
    state: &SplaState,
    q_group: &Matrix,
    config: &AttentionConfig,
    order: TaylorOrder,
    ledger: &mut IoLedger,
) -> Result<SplaBreakdown> {
    check_len("query width", config.head_dim, q_group.cols())?;
    let q_group = q_group.map(|x| config.precision.quantize(x));
    let selection = select_blocks(&q_group, &state.cache, config, order, ledger)?;
    let sparse = sparse_attention_fused(&q_group, &state.cache, &selection, config, ledger)?;
    let o_rla = rla_subtract_group(
        &q_group,
        &state.global_state,
        &sparse.selected_state,
        config.feature_map,
        ledger,
    )?;
    let mut output = sparse.o_sparse.clone();
    for h in 0..output.rows() {
        let normed = rms_norm(o_rla.row(h), &state.rms_scale);
        for (o, r) in output.row_mut(h).iter_mut().zip(normed) {
            *o += r;
        }
    }
    Ok(SplaBreakdown {
        selection,
        o_sparse: sparse.o_sparse,
        o_rla,
        output,
    })
}

/// Causal decode step: appends the new token, then attends with the group's
/// queries. Returns the `G x d` output.
pub fn spla_decode_step(
    state: &mut SplaState,
    q_group: &Matrix,
    new_key: &[f64],
    new_value: &[f64],
    config: &AttentionConfig,
    ledger: &mut IoLedger,
) -> Result<Matrix> {
    state.append(new_key, new_value, config)?;
    Ok(spla_attend(state, q_group, config, ledger)?.output)
}

/// Causal prefill over `T` positions: `queries[t]` is the `G x d` group at
/// position `t`, attending keys `0..=t`. Runs the decode loop from an empty
/// state.
pub fn spla_prefill(
    queries: &[Matrix],
    keys: &Matrix,
    values: &Matrix,
    config: &AttentionConfig,
) -> Result<Vec<Matrix>> {
    check_len("key rows", queries.len(), keys.rows())?;
    check_len("value rows", queries.len(), values.rows())?;
    let mut state = SplaState::new(config)?;
    let mut ledger = IoLedger::new();
    queries
        .iter()
        .zip(keys.iter_rows().zip(values.iter_rows()))
        .map(|(q, (k, v))| spla_decode_step(&mut state, q, k, v, config, &mut ledger))
        .collect()
}

/// SHA-256 over the little-endian bit patterns of a sequence of outputs, for
/// golden-file regression checks.
pub fn output_hash(outputs: &[Matrix]) -> String {
    let mut h = Sha256::new();
    for m in outputs {
        h.update((m.rows() as u64).to_le_bytes());
        h.update((m.cols() as u64).to_le_bytes());
        for x in m.as_slice() {
            h.update(x.to_bits().to_le_bytes());
        }
    }
    hex::encode(h.finalize())
}
