//! Brute-force references: dense softmax attention, exact block masses and
//! the naive complement scan for residual linear attention.
//!
//! Everything here is deliberately direct (every raw key and value is read)
//! and runs in f64.

use crate::cache::PagedKVCache;
use crate::config::FeatureMap;
use crate::error::{check_len, Result, SplaError};
use crate::rla::phi;
use crate::tensor::{axpy, dot, max_of, Matrix};

/// Numerically stable softmax.
pub fn softmax(scores: &[f64]) -> Vec<f64> {
    let m = max_of(scores);
    let e: Vec<f64> = scores.iter().map(|&s| (s - m).exp()).collect();
    let z: f64 = e.iter().sum();
    e.into_iter().map(|x| x / z).collect()
}

/// Softmax attention of every query row against all `N` keys.
pub fn dense_attention(q: &Matrix, keys: &Matrix, values: &Matrix) -> Result<Matrix> {
    if keys.rows() == 0 {
        return Err(SplaError::EmptyContext);
    }
    check_len("key width", q.cols(), keys.cols())?;
    check_len("value rows", keys.rows(), values.rows())?;
    let mut out = Matrix::zeros(q.rows(), values.cols());
    for (g, qg) in q.iter_rows().enumerate() {
        let scores: Vec<f64> = keys.iter_rows().map(|k| dot(qg, k)).collect();
        let w = softmax(&scores);
        let o = out.row_mut(g);
        for (wi, v) in w.iter().zip(values.iter_rows()) {
            axpy(o, *wi, v);
        }
    }
    Ok(out)
}

/// Dense attention over everything currently in the cache.
pub fn dense_attention_cache(q: &Matrix, cache: &PagedKVCache) -> Result<Matrix> {
    dense_attention(q, &cache.keys_matrix(), &cache.values_matrix())
}

/// `sum_j exp(q . k_j - shift)` over the rows of a block.
///
/// `shift` must be shared by every block of a context so that mass ratios
/// across blocks are exact; see [`context_max_score`].
pub fn true_block_mass<'a>(
    q: &[f64],
    key_block: impl IntoIterator<Item = &'a [f64]>,
    shift: f64,
) -> f64 {
    key_block
        .into_iter()
        .map(|k| (dot(q, k) - shift).exp())
        .sum()
}

/// Largest `q . k` over the complete-block tokens of the cache.
pub fn context_max_score(q: &[f64], cache: &PagedKVCache) -> f64 {
    let n = cache.n_complete_blocks() * cache.layout().block_size;
    cache
        .tokens()
        .take(n)
        .map(|(k, _)| dot(q, k))
        .fold(f64::NEG_INFINITY, f64::max)
}

/// Shifted masses of all complete blocks for one query, with the shift used.
pub fn true_block_masses(q: &[f64], cache: &PagedKVCache) -> Result<(Vec<f64>, f64)> {
    check_len("query width", cache.head_dim(), q.len())?;
    let shift = context_max_score(q, cache);
    let masses = (0..cache.n_complete_blocks())
        .map(|b| Ok(true_block_mass(q, cache.block_keys(b)?, shift)))
        .collect::<Result<Vec<_>>>()?;
    Ok((masses, shift))
}

/// Group relevance of every complete block: per-head normalized true masses
/// summed over heads.
pub fn true_group_block_scores(q_group: &Matrix, cache: &PagedKVCache) -> Result<Vec<f64>> {
    let nb = cache.n_complete_blocks();
    let mut out = vec![0.0; nb];
    for q in q_group.iter_rows() {
        let (masses, _) = true_block_masses(q, cache)?;
        let z: f64 = masses.iter().sum();
        for (o, m) in out.iter_mut().zip(masses) {
            *o += m / z;
        }
    }
    Ok(out)
}

/// `phi(q) sum_{i in unselected} sum_{t in block i} phi(k_t)^T v_t`, by
/// scanning every raw token of the unselected blocks.
pub fn rla_naive(
    q: &[f64],
    cache: &PagedKVCache,
    unselected: &[usize],
    kind: FeatureMap,
) -> Result<Vec<f64>> {
    let d = cache.head_dim();
    check_len("query width", d, q.len())?;
    let fq = phi(q, kind);
    let mut out = vec![0.0; d];
    for &b in unselected {
        for (k, v) in cache.block_tokens(b)? {
            let w = dot(&fq, &phi(k, kind));
            axpy(&mut out, w, v);
        }
    }
    Ok(out)
}
