//! Exact grouped attention over the selected blocks plus the live partial
//! block, fused with accumulation of the selected linear state.

use crate::cache::PagedKVCache;
use crate::config::{AttentionConfig, SparseNormalizer};
use crate::error::{check_len, Result, SplaError};
use crate::ledger::IoLedger;
use crate::rla::{phi, LinearState};
use crate::selection::SelectionResult;
use crate::tensor::{dot, Matrix};

/// Running softmax for one query head: max score, normalizer and the
/// unnormalized output, all relative to the running max.
#[derive(Debug, Clone, PartialEq)]
pub struct OnlineSoftmax {
    max: f64,
    sum: f64,
    acc: Vec<f64>,
}

impl OnlineSoftmax {
    pub fn new(dim: usize) -> Self {
        Self {
            max: f64::NEG_INFINITY,
            sum: 0.0,
            acc: vec![0.0; dim],
        }
    }

    pub fn is_empty(&self) -> bool {
        self.sum == 0.0
    }

    pub fn absorb(&mut self, score: f64, value: &[f64]) {
        if score > self.max {
            let r = (self.max - score).exp();
            self.sum *= r;
            self.acc.iter_mut().for_each(|a| *a *= r);
            self.max = score;
        }
        let w = (score - self.max).exp();
        self.sum += w;
        for (a, &v) in self.acc.iter_mut().zip(value) {
            *a += w * v;
        }
    }

    /// Combines two partial softmaxes over disjoint token sets.
    pub fn merge(&mut self, other: &OnlineSoftmax) {
        if other.is_empty() {
            return;
        }
        if self.is_empty() {
            *self = other.clone();
            return;
        }
        let m = self.max.max(other.max);
        let (ra, rb) = ((self.max - m).exp(), (other.max - m).exp());
        self.sum = self.sum * ra + other.sum * rb;
        for (a, &b) in self.acc.iter_mut().zip(&other.acc) {
            *a = *a * ra + b * rb;
        }
        self.max = m;
    }

    /// `ln` of the normalizer over absorbed tokens.
    pub fn log_normalizer(&self) -> f64 {
        self.max + self.sum.ln()
    }

    pub fn output(&self) -> Vec<f64> {
        self.acc.iter().map(|a| a / self.sum).collect()
    }
}

/// Folds the partial-block tokens into each head's running softmax.
pub fn attend_partial<'a>(
    q_group: &Matrix,
    partial: impl IntoIterator<Item = (&'a [f64], &'a [f64])>,
    running: &mut [OnlineSoftmax],
) {
    for (k, v) in partial {
        for (q, r) in q_group.iter_rows().zip(running.iter_mut()) {
            r.absorb(dot(q, k), v);
        }
    }
}

/// Per-token attention weights exposed for normalization checks.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionWeights {
    /// Cache positions in attended order.
    pub tokens: Vec<usize>,
    /// `G x tokens.len()`.
    pub weights: Matrix,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SparsePassOutput {
    /// `G x d` exact attention output over the attended union.
    pub o_sparse: Matrix,
    /// State over the selected complete blocks.
    pub selected_state: LinearState,
    /// Present only from [`sparse_attention_fused_debug`].
    pub weights: Option<AttentionWeights>,
}

/// Exact attention over selected blocks and partial tokens; builds the
/// selected linear state from the same loaded blocks.
///
/// Charges `(m*B + p) * 2d` exact KV elements for `m` selected blocks and `p`
/// partial tokens.
pub fn sparse_attention_fused(
    q_group: &Matrix,
    cache: &PagedKVCache,
    selection: &SelectionResult,
    config: &AttentionConfig,
    ledger: &mut IoLedger,
) -> Result<SparsePassOutput> {
    sparse_pass(q_group, cache, selection, config, ledger, false)
}

/// Same as [`sparse_attention_fused`] but also returns per-token weights.
pub fn sparse_attention_fused_debug(
    q_group: &Matrix,
    cache: &PagedKVCache,
    selection: &SelectionResult,
    config: &AttentionConfig,
    ledger: &mut IoLedger,
) -> Result<SparsePassOutput> {
    sparse_pass(q_group, cache, selection, config, ledger, true)
}

fn sparse_pass(
    q_group: &Matrix,
    cache: &PagedKVCache,
    selection: &SelectionResult,
    config: &AttentionConfig,
    ledger: &mut IoLedger,
    record: bool,
) -> Result<SparsePassOutput> {
    let d = cache.head_dim();
    check_len("query width", d, q_group.cols())?;
    let q_group = q_group.map(|x| config.precision.quantize(x));
    let g = q_group.rows();
    let bsz = cache.layout().block_size;
    let nb = cache.n_complete_blocks();

    let mut running = vec![OnlineSoftmax::new(d); g];
    let mut selected_state = LinearState::zeros(d, config.precision);
    let mut tokens = Vec::new();
    let mut scores: Vec<Vec<f64>> = vec![Vec::new(); g];

    for &b in &selection.indices {
        if b >= nb {
            return Err(SplaError::IndexOutOfRange {
                index: b,
                n_blocks: nb,
            });
        }
        for (t, (k, v)) in cache.block_tokens(b)?.enumerate() {
            for (h, (q, r)) in q_group.iter_rows().zip(running.iter_mut()).enumerate() {
                let s = dot(q, k);
                r.absorb(s, v);
                if record {
                    scores[h].push(s);
                }
            }
            selected_state.accumulate_feature(&phi(k, config.feature_map), v);
            if record {
                tokens.push(b * bsz + t);
            }
        }
    }
    let partial_start = nb * bsz;
    attend_partial(&q_group, cache.partial_tokens(), &mut running);
    if record {
        for (t, (k, _)) in cache.partial_tokens().enumerate() {
            tokens.push(partial_start + t);
            for (h, q) in q_group.iter_rows().enumerate() {
                scores[h].push(dot(q, k));
            }
        }
    }

    let attended = selection.indices.len() * bsz + cache.partial_len();
    if attended == 0 {
        return Err(SplaError::EmptyContext);
    }
    ledger.charge_exact_kv((attended * 2 * d) as u64);

    let mut o_sparse = Matrix::zeros(g, d);
    for (h, r) in running.iter().enumerate() {
        o_sparse.row_mut(h).copy_from_slice(&r.output());
    }

    if config.normalizer == SparseNormalizer::Global {
        // Ablation: rescale by Z_selected / Z_context. Needs every
        // unattended key, which is charged as exact traffic.
        let unattended = (nb - selection.indices.len()) * bsz;
        ledger.charge_exact_kv((unattended * d) as u64);
        for (h, (q, r)) in q_group.iter_rows().zip(&running).enumerate() {
            let mut all = OnlineSoftmax::new(0);
            for (k, _) in cache.tokens() {
                all.absorb(dot(q, k), &[]);
            }
            let ratio = (r.log_normalizer() - all.log_normalizer()).exp();
            o_sparse.row_mut(h).iter_mut().for_each(|x| *x *= ratio);
        }
    }

    let weights = if record {
        let mut w = Matrix::zeros(g, tokens.len());
        for (h, r) in running.iter().enumerate() {
            let log_z = r.log_normalizer();
            for (slot, s) in w.row_mut(h).iter_mut().zip(&scores[h]) {
                *slot = (s - log_z).exp();
            }
        }
        Some(AttentionWeights { tokens, weights: w })
    } else {
        None
    };

    Ok(SparsePassOutput {
        o_sparse,
        selected_state,
        weights,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn online_softmax_matches_single_pass() {
        let scores = [0.5, 3.0, -1.0, 2.5, 7.0];
        let values: Vec<[f64; 2]> = (0..5).map(|i| [i as f64, 1.0 - i as f64]).collect();
        let mut a = OnlineSoftmax::new(2);
        let mut b = OnlineSoftmax::new(2);
        for i in 0..2 {
            a.absorb(scores[i], &values[i]);
        }
        for i in 2..5 {
            b.absorb(scores[i], &values[i]);
        }
        a.merge(&b);
        let w = crate::oracle::softmax(&scores);
        let mut expect = [0.0; 2];
        for (wi, v) in w.iter().zip(&values) {
            expect[0] += wi * v[0];
            expect[1] += wi * v[1];
        }
        let got = a.output();
        assert!((got[0] - expect[0]).abs() < 1e-12);
        assert!((got[1] - expect[1]).abs() < 1e-12);
    }

    #[test]
    fn empty_partial_is_noop() {
        let q = Matrix::from_rows(2, &[[1.0, 0.0]]).unwrap();
        let mut r = vec![OnlineSoftmax::new(2)];
        r[0].absorb(0.3, &[1.0, 2.0]);
        let before = r.clone();
        attend_partial(&q, std::iter::empty(), &mut r);
        assert_eq!(r, before);
    }

    #[test]
    fn merge_with_empty_is_identity() {
        let mut a = OnlineSoftmax::new(1);
        a.absorb(1.0, &[2.0]);
        let snapshot = a.clone();
        a.merge(&OnlineSoftmax::new(1));
        assert_eq!(a, snapshot);
        let mut e = OnlineSoftmax::new(1);
        e.merge(&snapshot);
        assert_eq!(e, snapshot);
    }
}
