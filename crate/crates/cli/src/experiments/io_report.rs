//! Decode-step traffic model over a (seq_len, batch) grid, cross-checked
//! against the ledger of live decode steps at the grid corners.

use spla::decode_sim::{run_sim, spla_step_elements, CostModel, SimReport};
use spla::spla::spla_decode_step;
use spla::{AttentionConfig, IoLedger, Matrix, SplaState};

use super::{Report, RunOptions};
use crate::settings::{IoReportSettings, Settings};
use crate::synthetic::{gaussian, rng_for};

/// Ledger comparison for one grid corner, per KV head of the whole batch.
#[derive(Debug, Clone, PartialEq)]
pub struct CornerCheck {
    pub seq_len: usize,
    pub batch: usize,
    pub measured: IoLedger,
    pub predicted: IoLedger,
}

impl CornerCheck {
    /// Absolute element-count difference summed over the three classes.
    pub fn discrepancy(&self) -> u64 {
        let m = self.measured;
        let p = self.predicted;
        m.exact_kv_elements.abs_diff(p.exact_kv_elements)
            + m.summary_elements.abs_diff(p.summary_elements)
            + m.state_elements.abs_diff(p.state_elements)
    }
}

pub fn config_for(opts: &RunOptions) -> AttentionConfig {
    let mut c = AttentionConfig {
        precision: opts.precision,
        ..Default::default()
    };
    if let Some(b) = opts.block_size {
        c.block_size = b;
    }
    if let Some(k) = opts.top_k {
        c.top_k = k;
    }
    c
}

pub fn cost_model(io: &IoReportSettings) -> CostModel {
    CostModel {
        bytes_per_element: io.bytes_per_element,
        hbm_bandwidth: io.hbm_bandwidth,
        param_bytes: io.param_bytes,
    }
}

/// The configured grid, truncated by `--grid`.
pub fn grid(io: &IoReportSettings, opts: &RunOptions) -> (Vec<usize>, Vec<usize>) {
    let (n, m) = opts.grid.unwrap_or((io.seq_lens.len(), io.batches.len()));
    (
        io.seq_lens.iter().copied().take(n).collect(),
        io.batches.iter().copied().take(m).collect(),
    )
}

/// Ledger of one live decode step for a single sequence whose context,
/// including the new token, holds `seq_len` tokens.
pub fn live_step_ledger(seq_len: usize, seed: u64, config: &AttentionConfig) -> spla::Result<IoLedger> {
    let mut rng = rng_for(seed, seq_len as u64);
    let d = config.head_dim;
    let mut state = SplaState::new(config)?;
    for _ in 1..seq_len {
        state.append(&gaussian(&mut rng, d, 1.0), &gaussian(&mut rng, d, 1.0), config)?;
    }
    let q = Matrix::from_vec(config.group_size, d, gaussian(&mut rng, config.group_size * d, 1.0))?;
    let mut ledger = IoLedger::new();
    spla_decode_step(
        &mut state,
        &q,
        &gaussian(&mut rng, d, 1.0),
        &gaussian(&mut rng, d, 1.0),
        config,
        &mut ledger,
    )?;
    Ok(ledger)
}

fn scaled(l: IoLedger, n: u64) -> IoLedger {
    IoLedger {
        exact_kv_elements: l.exact_kv_elements * n,
        summary_elements: l.summary_elements * n,
        state_elements: l.state_elements * n,
    }
}

pub fn corner_checks(
    seq_lens: &[usize],
    batches: &[usize],
    seed: u64,
    config: &AttentionConfig,
) -> spla::Result<Vec<CornerCheck>> {
    let (Some(&s0), Some(&s1), Some(&b0), Some(&b1)) =
        (seq_lens.first(), seq_lens.last(), batches.first(), batches.last())
    else {
        return Ok(Vec::new());
    };
    let mut seqs = vec![s0, s1];
    seqs.dedup();
    let mut bats = vec![b0, b1];
    bats.dedup();
    let mut out = Vec::new();
    for &s in &seqs {
        let live = live_step_ledger(s, seed, config)?;
        let model = spla_step_elements(s, config);
        for &b in &bats {
            out.push(CornerCheck {
                seq_len: s,
                batch: b,
                measured: scaled(live, b as u64),
                predicted: scaled(model, b as u64),
            });
        }
    }
    Ok(out)
}

pub fn simulate(opts: &RunOptions, settings: &Settings) -> spla::Result<SimReport> {
    let io = &settings.io_report;
    let config = config_for(opts);
    config.validate()?;
    let (seq_lens, batches) = grid(io, opts);
    Ok(run_sim(&seq_lens, &batches, &config, io.kv_heads, &cost_model(io)))
}

pub fn run(opts: &RunOptions, settings: &Settings) -> spla::Result<Report> {
    let io = &settings.io_report;
    let sim = simulate(opts, settings)?;
    let mut report = Report::new(sim.to_csv());
    let (seq_lens, batches) = grid(io, opts);
    let live_config = AttentionConfig {
        head_dim: io.validation_head_dim,
        ..config_for(opts)
    };
    for c in corner_checks(&seq_lens, &batches, opts.seed, &live_config)? {
        let delta = c.discrepancy();
        report.check(
            delta == 0,
            format!(
                "corner seq_len={} batch={}: ledger {:?} vs model {:?}, discrepancy {delta}",
                c.seq_len, c.batch, c.measured, c.predicted
            ),
        );
    }
    Ok(report)
}
