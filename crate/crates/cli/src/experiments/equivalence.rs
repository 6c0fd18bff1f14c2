//! Randomized check of the residual subtraction identity and of dense
//! recovery under full selection.

use rand::Rng;
use rayon::prelude::*;
use spla::oracle::{dense_attention_cache, rla_naive};
use spla::rla::rla_subtract_group;
use spla::selection::SelectionResult;
use spla::sparse::sparse_attention_fused;
use spla::spla::spla_attend;
use spla::{AttentionConfig, IoLedger, Precision, SplaState};

use super::{sci, Report, RunOptions};
use crate::settings::Settings;
use crate::synthetic::{gaussian, rng_for, subset};

pub const CSV_HEADER: &str =
    "trial,d,n_blocks,block_size,partial,n_selected,rla_max_abs_err,dense_max_abs_err,pass";

#[derive(Debug, Clone, PartialEq)]
pub struct TrialRow {
    pub trial: usize,
    pub head_dim: usize,
    pub n_blocks: usize,
    pub block_size: usize,
    pub partial: usize,
    pub n_selected: usize,
    pub rla_err: f64,
    pub dense_err: f64,
    pub pass: bool,
}

pub fn run_trial(
    trial: usize,
    opts: &RunOptions,
    settings: &Settings,
) -> spla::Result<TrialRow> {
    let eq = &settings.equivalence;
    let mut rng = rng_for(opts.seed, trial as u64);
    let d = eq.head_dims[rng.random_range(0..eq.head_dims.len())];
    let b = match opts.block_size {
        Some(b) => b,
        None => eq.block_sizes[rng.random_range(0..eq.block_sizes.len())],
    };
    let nb = rng.random_range(eq.min_blocks..=eq.max_blocks);
    let partial = rng.random_range(0..b);
    // selection is drawn at random below; the budget only matters for the
    // full-selection dense check
    let config = AttentionConfig {
        head_dim: d,
        group_size: eq.group_size,
        block_size: b,
        window: b,
        stride: b,
        top_k: nb,
        n_sink: 1,
        n_recent: 1,
        precision: opts.precision,
        ..Default::default()
    };
    let mut state = SplaState::new(&config)?;
    for _ in 0..nb * b + partial {
        state.append(&gaussian(&mut rng, d, 1.0), &gaussian(&mut rng, d, 1.0), &config)?;
    }
    let q = spla::Matrix::from_vec(eq.group_size, d, gaussian(&mut rng, eq.group_size * d, 1.0))?
        .map(|x| opts.precision.quantize(x));

    // the exact branch needs at least one token to attend
    let m = rng.random_range(usize::from(partial == 0)..=nb);
    let selection = SelectionResult {
        indices: subset(&mut rng, nb, m),
        block_scores: vec![0.0; nb],
    };
    let mut ledger = IoLedger::new();
    let sparse = sparse_attention_fused(&q, &state.cache, &selection, &config, &mut ledger)?;
    let fast = rla_subtract_group(&q, &state.global_state, &sparse.selected_state, config.feature_map, &mut ledger)?;
    let unselected = selection.complement(nb);
    let mut rla_err = 0.0f64;
    for h in 0..q.rows() {
        let slow = rla_naive(q.row(h), &state.cache, &unselected, config.feature_map)?;
        for (a, b) in fast.row(h).iter().zip(&slow) {
            rla_err = rla_err.max((a - b).abs());
        }
    }

    let full = spla_attend(&state, &q, &config, &mut IoLedger::new())?;
    let dense = dense_attention_cache(&q, &state.cache)?;
    let dense_err = full.output.max_abs_diff(&dense);

    let rla_tol = match opts.precision {
        Precision::High => settings.tolerances.rla_high,
        Precision::Low => settings.tolerances.rla_low,
    };
    Ok(TrialRow {
        trial,
        head_dim: d,
        n_blocks: nb,
        block_size: b,
        partial,
        n_selected: m,
        rla_err,
        dense_err,
        pass: rla_err <= rla_tol && dense_err <= settings.tolerances.dense_recovery,
    })
}

pub fn run(opts: &RunOptions, settings: &Settings) -> spla::Result<Report> {
    let trials = opts.trials.unwrap_or(settings.equivalence.trials);
    let rows = (0..trials)
        .into_par_iter()
        .map(|t| run_trial(t, opts, settings))
        .collect::<spla::Result<Vec<_>>>()?;

    let mut csv = String::from(CSV_HEADER);
    csv.push('\n');
    for r in &rows {
        csv.push_str(&format!(
            "{},{},{},{},{},{},{},{},{}\n",
            r.trial,
            r.head_dim,
            r.n_blocks,
            r.block_size,
            r.partial,
            r.n_selected,
            sci(r.rla_err),
            sci(r.dense_err),
            r.pass
        ));
    }
    let mut report = Report::new(csv);
    let worst_rla = rows.iter().map(|r| r.rla_err).fold(0.0, f64::max);
    let worst_dense = rows.iter().map(|r| r.dense_err).fold(0.0, f64::max);
    for r in rows.iter().filter(|r| !r.pass) {
        report.check(
            false,
            format!(
                "trial {} (seed {}, stream {:#x}): rla {:e}, dense {:e}",
                r.trial,
                opts.seed,
                crate::synthetic::trial_seed(opts.seed, r.trial as u64),
                r.rla_err,
                r.dense_err
            ),
        );
    }
    report.check(
        rows.iter().all(|r| r.pass),
        format!(
            "{} trials: worst rla error {:e}, worst dense-recovery error {:e}",
            rows.len(),
            worst_rla,
            worst_dense
        ),
    );
    Ok(report)
}
