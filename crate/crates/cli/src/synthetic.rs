//! Seeded synthetic contexts.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use spla::Matrix;

/// Derives an independent stream seed for trial `i` of a run.
pub fn trial_seed(seed: u64, i: u64) -> u64 {
    splitmix64(seed ^ splitmix64(i.wrapping_add(0x5eed)))
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn rng_for(seed: u64, i: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(trial_seed(seed, i))
}

pub fn normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

pub fn gaussian(rng: &mut ChaCha8Rng, n: usize, std: f64) -> Vec<f64> {
    (0..n).map(|_| normal(rng) * std).collect()
}

pub fn unit(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    let v = gaussian(rng, n, 1.0);
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.into_iter().map(|x| x / norm).collect()
}

/// Random subset of `0..n` of size `m`, ascending.
pub fn subset(rng: &mut ChaCha8Rng, n: usize, m: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    let m = m.min(n);
    for i in 0..m {
        let j = rng.random_range(i..n);
        idx.swap(i, j);
    }
    let mut out = idx[..m].to_vec();
    out.sort_unstable();
    out
}

/// Query group: a shared direction scaled to `norm`, plus per-head jitter.
pub fn query_group(rng: &mut ChaCha8Rng, heads: usize, dim: usize, norm: f64, jitter: f64) -> (Vec<f64>, Matrix) {
    let dir = unit(rng, dim);
    let rows: Vec<Vec<f64>> = (0..heads)
        .map(|_| {
            dir.iter()
                .map(|x| x * norm + normal(rng) * jitter / (dim as f64).sqrt())
                .collect()
        })
        .collect();
    (dir, Matrix::from_rows(dim, &rows).expect("rows have width dim"))
}

/// Gaussian key blocks with per-block mean and per-dimension spread.
///
/// Block `b` draws keys from `N(mean_b, diag(std_b^2))`, where each block
/// picks a log-uniform spread in `std_range` and jitters it per dimension.
/// With `std_range = (0, 0)` every key equals its block mean.
pub struct GaussianBlocks {
    pub keys: Vec<Vec<f64>>,
    pub values: Vec<Vec<f64>>,
}

pub fn gaussian_blocks(
    rng: &mut ChaCha8Rng,
    n_blocks: usize,
    block_size: usize,
    dim: usize,
    mean_scale: f64,
    std_range: (f64, f64),
) -> GaussianBlocks {
    let mut keys = Vec::with_capacity(n_blocks * block_size);
    let mut values = Vec::with_capacity(n_blocks * block_size);
    let (lo, hi) = std_range;
    for _ in 0..n_blocks {
        let mean = gaussian(rng, dim, mean_scale / (dim as f64).sqrt());
        let scale = if hi <= 0.0 {
            0.0
        } else {
            let u: f64 = rng.random();
            (lo.ln() + u * (hi.ln() - lo.ln())).exp()
        };
        let std: Vec<f64> = (0..dim)
            .map(|_| scale * rng.random_range(0.5..1.5))
            .collect();
        for _ in 0..block_size {
            keys.push(mean.iter().zip(&std).map(|(m, s)| m + s * normal(rng)).collect());
            values.push(gaussian(rng, dim, 1.0));
        }
    }
    GaussianBlocks { keys, values }
}
