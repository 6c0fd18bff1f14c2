#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use spla::{AttentionConfig, Matrix, PagedKVCache};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gaussian_vec(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> Vec<f64> {
    (0..n)
        .map(|_| {
            let z: f64 = StandardNormal.sample(rng);
            z * scale
        })
        .collect()
}

pub fn gaussian_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> Matrix {
    Matrix::from_vec(rows, cols, gaussian_vec(rng, rows * cols, scale)).unwrap()
}

/// Small config with every divisibility constraint satisfied.
pub fn small_config(d: usize, block: usize, k: usize) -> AttentionConfig {
    AttentionConfig {
        head_dim: d,
        group_size: 2,
        block_size: block,
        window: block / 2,
        stride: block / 4,
        top_k: k,
        n_sink: 1,
        n_recent: 1,
        ..Default::default()
    }
}

pub fn random_cache(rng: &mut ChaCha8Rng, config: &AttentionConfig, tokens: usize, scale: f64) -> PagedKVCache {
    let mut c = PagedKVCache::new(config.layout());
    for _ in 0..tokens {
        let k = gaussian_vec(rng, config.head_dim, scale);
        let v = gaussian_vec(rng, config.head_dim, 1.0);
        c.append(&k, &v).unwrap();
    }
    c
}

/// Random subset of `0..n` with exactly `m` members, ascending.
pub fn random_subset(rng: &mut ChaCha8Rng, n: usize, m: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    for i in 0..m.min(n) {
        let j = rng.random_range(i..n);
        idx.swap(i, j);
    }
    let mut out: Vec<usize> = idx[..m.min(n)].to_vec();
    out.sort_unstable();
    out
}

/// Kahan-compensated dot product, used by oracles that must not share the
/// library's summation path.
pub fn kahan_dot(a: &[f64], b: &[f64]) -> f64 {
    let mut sum = 0.0;
    let mut c = 0.0;
    for (x, y) in a.iter().zip(b) {
        let t = x * y - c;
        let s = sum + t;
        c = (s - sum) - t;
        sum = s;
    }
    sum
}
