//! Deviation from dense attention as the context grows with the selection
//! budget held fixed.
//!
//! Each context has a sink block, a few needle blocks aligned with the query
//! and a long tail of weakly scored blocks whose values share a mean. The
//! tail's total mass grows with length, so anything that drops it drifts away
//! from dense attention.

use rayon::prelude::*;
use spla::baselines::{attend, Strategy};
use spla::oracle::dense_attention_cache;
use spla::spla::{rms_norm, spla_attend};
use spla::{AttentionConfig, IoLedger, Matrix, SplaState};

use super::{sci, Report, RunOptions};
use crate::settings::{DivergenceSettings, Settings};
use crate::stats::{mean, spearman};
use crate::synthetic::{gaussian, normal, query_group, rng_for, subset};

pub const CSV_HEADER: &str = "trial,seq_len,spla,spa,infllm_v2,nsa_overlap";

/// Calibration contexts use streams above this offset so they never overlap
/// the evaluation trials.
const CALIBRATION_STREAM: u64 = 1 << 32;

#[derive(Debug, Clone, PartialEq)]
pub struct DivergenceRow {
    pub trial: usize,
    pub seq_len: usize,
    /// Mean per-head L2 deviation from dense, in [`Strategy::ALL`] order.
    pub deviation: [f64; 4],
}

pub fn config_for(ds: &DivergenceSettings, opts: &RunOptions) -> AttentionConfig {
    AttentionConfig {
        head_dim: ds.head_dim,
        group_size: ds.group_size,
        block_size: ds.block_size,
        window: ds.window,
        stride: ds.stride,
        top_k: opts.top_k.unwrap_or(ds.top_k),
        n_sink: ds.n_sink,
        n_recent: ds.n_recent,
        precision: opts.precision,
        ..Default::default()
    }
}

/// Builds one heavy-tailed context of `n_blocks` blocks and its query group.
pub fn build_context(
    stream: u64,
    seed: u64,
    n_blocks: usize,
    ds: &DivergenceSettings,
    config: &AttentionConfig,
) -> spla::Result<(SplaState, Matrix)> {
    let mut rng = rng_for(seed, stream);
    let d = config.head_dim;
    let b = config.block_size;
    let (dir, q) = query_group(&mut rng, config.group_size, d, ds.query_norm, 0.5);
    let q = q.map(|x| config.precision.quantize(x));
    let tail_mean = gaussian(&mut rng, d, 1.0);
    let middle: Vec<usize> = (1..n_blocks).collect();
    let needles: Vec<usize> = subset(&mut rng, middle.len(), ds.needles)
        .into_iter()
        .map(|i| middle[i])
        .collect();
    let noise = 0.1 / (d as f64).sqrt();

    let mut state = SplaState::new(config)?;
    for blk in 0..n_blocks {
        let planted = if blk < ds.n_sink {
            Some(ds.sink_score)
        } else if needles.contains(&blk) {
            Some(ds.needle_score)
        } else {
            None
        };
        let block_value = gaussian(&mut rng, d, 1.0);
        for _ in 0..b {
            let (k, v) = match planted {
                Some(score) => {
                    let along = score / ds.query_norm;
                    let k: Vec<f64> = dir.iter().map(|x| x * along + normal(&mut rng) * noise).collect();
                    let v: Vec<f64> = block_value.iter().map(|x| x + normal(&mut rng) * noise).collect();
                    (k, v)
                }
                None => {
                    let k = gaussian(&mut rng, d, ds.tail_key_std);
                    let v: Vec<f64> = tail_mean
                        .iter()
                        .map(|m| m + normal(&mut rng) * ds.tail_value_noise)
                        .collect();
                    (k, v)
                }
            };
            state.append(&k, &v, config)?;
        }
    }
    Ok((state, q))
}

fn l2_per_head(a: &Matrix, b: &Matrix) -> f64 {
    let devs: Vec<f64> = (0..a.rows())
        .map(|h| spla::tensor::l2_distance(a.row(h), b.row(h)))
        .collect();
    mean(&devs)
}

/// Least-squares per-dimension RMS scale mapping the normalized residual
/// branch onto the true residual `dense - o_sparse`, fitted on contexts
/// disjoint from the evaluation trials.
pub fn calibrate_rms_scale(
    seed: u64,
    ds: &DivergenceSettings,
    config: &AttentionConfig,
) -> spla::Result<Vec<f64>> {
    let d = config.head_dim;
    let ones = vec![1.0; d];
    let jobs: Vec<(usize, usize)> = (0..ds.calibration_trials)
        .flat_map(|t| (0..ds.block_multiples.len()).map(move |l| (t, l)))
        .collect();
    let parts = jobs
        .into_par_iter()
        .map(|(t, l)| {
            let stream = CALIBRATION_STREAM + (t * ds.block_multiples.len() + l) as u64;
            let (state, q) = build_context(stream, seed, ds.block_multiples[l], ds, config)?;
            let dense = dense_attention_cache(&q, &state.cache)?;
            let br = spla_attend(&state, &q, config, &mut IoLedger::new())?;
            let mut num = vec![0.0; d];
            let mut den = vec![0.0; d];
            for h in 0..q.rows() {
                let u = rms_norm(br.o_rla.row(h), &ones);
                for i in 0..d {
                    let target = dense.row(h)[i] - br.o_sparse.row(h)[i];
                    num[i] += u[i] * target;
                    den[i] += u[i] * u[i];
                }
            }
            Ok((num, den))
        })
        .collect::<spla::Result<Vec<_>>>()?;
    let mut num = vec![0.0; d];
    let mut den = vec![0.0; d];
    for (n, dd) in parts {
        for i in 0..d {
            num[i] += n[i];
            den[i] += dd[i];
        }
    }
    Ok(num
        .iter()
        .zip(&den)
        .map(|(n, dd)| if *dd > 0.0 { n / dd } else { 0.0 })
        .collect())
}

pub fn run_trial(
    trial: usize,
    length_index: usize,
    seed: u64,
    ds: &DivergenceSettings,
    config: &AttentionConfig,
    rms_scale: &[f64],
) -> spla::Result<DivergenceRow> {
    let m = ds.block_multiples[length_index];
    let stream = (trial * ds.block_multiples.len() + length_index) as u64;
    let (state, q) = build_context(stream, seed, m, ds, config)?;
    let state = state.with_rms_scale(rms_scale.to_vec())?;
    let dense = dense_attention_cache(&q, &state.cache)?;
    let mut deviation = [0.0; 4];
    for (slot, strategy) in deviation.iter_mut().zip(Strategy::ALL) {
        let out = attend(strategy, &state, &q, config, &mut IoLedger::new())?;
        *slot = l2_per_head(&out, &dense);
    }
    Ok(DivergenceRow {
        trial,
        seq_len: m * config.block_size,
        deviation,
    })
}

pub fn run(opts: &RunOptions, settings: &Settings) -> spla::Result<Report> {
    let mut ds = settings.divergence.clone();
    if let Some(b) = opts.block_size {
        // keep the window and stride proportions of the defaults
        ds.window = (b * ds.window / ds.block_size).max(1);
        ds.stride = (b * ds.stride / ds.block_size).max(1);
        ds.block_size = b;
    }
    let config = config_for(&ds, opts);
    config.validate()?;
    let trials = opts.trials.unwrap_or(ds.trials);
    let rms_scale = calibrate_rms_scale(opts.seed, &ds, &config)?;

    let jobs: Vec<(usize, usize)> = (0..trials)
        .flat_map(|t| (0..ds.block_multiples.len()).map(move |l| (t, l)))
        .collect();
    let rows = jobs
        .into_par_iter()
        .map(|(t, l)| run_trial(t, l, opts.seed, &ds, &config, &rms_scale))
        .collect::<spla::Result<Vec<_>>>()?;

    let mut csv = String::from(CSV_HEADER);
    csv.push('\n');
    for r in &rows {
        let cells: Vec<String> = r.deviation.iter().map(|x| sci(*x)).collect();
        csv.push_str(&format!("{},{},{}\n", r.trial, r.seq_len, cells.join(",")));
    }
    let lengths: Vec<usize> = ds.block_multiples.iter().map(|m| m * config.block_size).collect();
    let mut means = Vec::new();
    for &n in &lengths {
        let at: Vec<&DivergenceRow> = rows.iter().filter(|r| r.seq_len == n).collect();
        let mut avg = [0.0; 4];
        for (i, a) in avg.iter_mut().enumerate() {
            *a = mean(&at.iter().map(|r| r.deviation[i]).collect::<Vec<_>>());
        }
        let cells: Vec<String> = avg.iter().map(|x| sci(*x)).collect();
        csv.push_str(&format!("mean,{},{}\n", n, cells.join(",")));
        means.push(avg);
    }

    let mut report = Report::new(csv);
    let truncation = Strategy::ALL.iter().position(|s| *s == Strategy::InfLlmV2).unwrap();
    let spla_ix = Strategy::ALL.iter().position(|s| *s == Strategy::Spla).unwrap();

    let shortest_blocks = ds.block_multiples[0];
    if shortest_blocks <= config.top_k {
        let at_short: Vec<&DivergenceRow> = rows.iter().filter(|r| r.seq_len == lengths[0]).collect();
        // the overlap baseline adds its compressed branch even when every block
        // is selected, so it is reported but not held to this bound
        for (i, s) in Strategy::ALL.iter().enumerate().filter(|(_, s)| **s != Strategy::NsaOverlap) {
            let worst = at_short.iter().map(|r| r.deviation[i]).fold(0.0, f64::max);
            report.check(
                worst <= ds.short_tolerance,
                format!("{} deviation at seq_len {}: {:e} <= {:e}", s.name(), lengths[0], worst, ds.short_tolerance),
            );
        }
    }

    let xs: Vec<f64> = lengths.iter().map(|&n| n as f64).collect();
    let ys: Vec<f64> = means.iter().map(|m| m[truncation]).collect();
    let rho = spearman(&xs, &ys);
    report.check(
        rho > ds.min_spearman,
        format!("truncation deviation vs length: spearman {rho:.4} > {}", ds.min_spearman),
    );

    let longest = *lengths.last().unwrap();
    let at_long: Vec<&DivergenceRow> = rows.iter().filter(|r| r.seq_len == longest).collect();
    let wins = at_long
        .iter()
        .filter(|r| r.deviation[spla_ix] < r.deviation[truncation])
        .count();
    let frac = wins as f64 / at_long.len().max(1) as f64;
    report.check(
        frac >= ds.min_win_fraction,
        format!(
            "spla beats truncation at seq_len {longest} in {wins}/{} paired trials ({frac:.3} >= {})",
            at_long.len(),
            ds.min_win_fraction
        ),
    );
    Ok(report)
}
