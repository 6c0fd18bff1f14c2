//! Analytical memory-traffic model of one decode step.
//!
//! Decoding is treated as purely memory bound: step time is bytes moved over
//! HBM bandwidth, compute is ignored. Per-head element counts are the same
//! closed forms the [`IoLedger`] records during a live decode step.

use std::fmt::Write as _;

use crate::config::{AttentionConfig, ScoreGranularity};
use crate::ledger::IoLedger;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CostModel {
    pub bytes_per_element: f64,
    /// Bytes per second.
    pub hbm_bandwidth: f64,
    /// Weight bytes loaded once per step, shared by the batch.
    pub param_bytes: f64,
}

impl Default for CostModel {
    /// bf16 storage, 1.6 TB/s, and one layer's share of 28 GB of bf16
    /// weights spread over 40 layers.
    fn default() -> Self {
        Self {
            bytes_per_element: 2.0,
            hbm_bandwidth: 1.6e12,
            param_bytes: 28e9 / 40.0,
        }
    }
}

impl CostModel {
    pub fn is_valid(&self) -> bool {
        self.bytes_per_element > 0.0 && self.hbm_bandwidth > 0.0 && self.param_bytes >= 0.0
    }

    pub fn step_time(&self, bytes: f64) -> f64 {
        bytes / self.hbm_bandwidth
    }
}

/// KV elements one dense decode step loads for one head of one sequence.
pub fn dense_step_elements(seq_len: usize, config: &AttentionConfig) -> u64 {
    (seq_len * 2 * config.head_dim) as u64
}

/// Ledger a SPLA decode step records for one KV head of one sequence whose
/// context (including the new token) holds `seq_len` tokens.
pub fn spla_step_elements(seq_len: usize, config: &AttentionConfig) -> IoLedger {
    let d = config.head_dim;
    let b = config.block_size;
    let nb = seq_len / b;
    let partial = seq_len % b;
    let selected = config.top_k.min(nb);
    let summaries = match config.granularity {
        ScoreGranularity::Windows => config.layout().window_count(nb),
        ScoreGranularity::Blocks => nb,
    };
    IoLedger {
        exact_kv_elements: ((selected * b + partial) * 2 * d) as u64,
        summary_elements: (summaries * 2 * d) as u64,
        state_elements: (2 * d * d) as u64,
    }
}

pub fn dense_step_bytes(
    seq_len: usize,
    batch: usize,
    config: &AttentionConfig,
    kv_heads: usize,
    model: &CostModel,
) -> f64 {
    model.param_bytes
        + (batch * kv_heads) as f64 * dense_step_elements(seq_len, config) as f64 * model.bytes_per_element
}

pub fn spla_step_bytes(
    seq_len: usize,
    batch: usize,
    config: &AttentionConfig,
    kv_heads: usize,
    model: &CostModel,
) -> f64 {
    model.param_bytes
        + (batch * kv_heads) as f64
            * spla_step_elements(seq_len, config).total_elements() as f64
            * model.bytes_per_element
}

pub fn speedup_percent(dense_bytes: f64, sparse_bytes: f64) -> f64 {
    100.0 * (dense_bytes - sparse_bytes) / dense_bytes
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimRow {
    pub seq_len: usize,
    pub batch: usize,
    pub dense_bytes: f64,
    pub sparse_bytes: f64,
    pub speedup_percent: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SimReport {
    pub rows: Vec<SimRow>,
}

pub const CSV_HEADER: &str = "seq_len,batch,dense_bytes,sparse_bytes,speedup_percent";

impl SimReport {
    pub fn to_csv(&self) -> String {
        let mut s = String::from(CSV_HEADER);
        s.push('\n');
        for r in &self.rows {
            writeln!(
                s,
                "{},{},{},{},{:.6}",
                r.seq_len, r.batch, r.dense_bytes, r.sparse_bytes, r.speedup_percent
            )
            .unwrap();
        }
        s
    }

    pub fn get(&self, seq_len: usize, batch: usize) -> Option<&SimRow> {
        self.rows
            .iter()
            .find(|r| r.seq_len == seq_len && r.batch == batch)
    }
}

/// Evaluates the model on the `seq_lens x batches` grid, sequence length
/// major.
pub fn run_sim(
    seq_lens: &[usize],
    batches: &[usize],
    config: &AttentionConfig,
    kv_heads: usize,
    model: &CostModel,
) -> SimReport {
    let mut rows = Vec::with_capacity(seq_lens.len() * batches.len());
    for &seq_len in seq_lens {
        for &batch in batches {
            let dense = dense_step_bytes(seq_len, batch, config, kv_heads, model);
            let sparse = spla_step_bytes(seq_len, batch, config, kv_heads, model);
            rows.push(SimRow {
                seq_len,
                batch,
                dense_bytes: dense,
                sparse_bytes: sparse,
                speedup_percent: speedup_percent(model.step_time(dense), model.step_time(sparse)),
            });
        }
    }
    SimReport { rows }
}
