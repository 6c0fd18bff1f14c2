//! Block-partitioned KV storage with eagerly maintained key statistics.

use std::io::{Read, Write};

use crate::config::CacheLayout;
use crate::error::{check_len, Result, SplaError};
use crate::tensor::Matrix;

/// Mean and diagonal covariance of a span of keys.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockSummary {
    pub mean: Vec<f64>,
    /// Population (divide-by-n) variance per dimension.
    pub diag_cov: Vec<f64>,
    pub count: usize,
}

impl BlockSummary {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }
}

/// Summarizes the rows of `keys`.
pub fn compute_summary(keys: &Matrix) -> Result<BlockSummary> {
    summarize_flat(keys.as_slice(), keys.cols())
}

/// Summarizes `data.len() / dim` rows stored contiguously. Uses Welford's
/// update in row order, so the result depends only on the row sequence.
pub(crate) fn summarize_flat(data: &[f64], dim: usize) -> Result<BlockSummary> {
    if dim == 0 || data.is_empty() {
        return Err(SplaError::EmptySpan);
    }
    let mut mean = vec![0.0; dim];
    let mut m2 = vec![0.0; dim];
    let mut n = 0usize;
    for row in data.chunks_exact(dim) {
        n += 1;
        let inv = 1.0 / n as f64;
        for ((mu, acc), &x) in mean.iter_mut().zip(m2.iter_mut()).zip(row) {
            let delta = x - *mu;
            *mu += delta * inv;
            *acc += delta * (x - *mu);
        }
    }
    let inv_n = 1.0 / n as f64;
    let diag_cov = m2.into_iter().map(|v| (v * inv_n).max(0.0)).collect();
    Ok(BlockSummary {
        mean,
        diag_cov,
        count: n,
    })
}

fn mean_flat(data: &[f64], dim: usize) -> Vec<f64> {
    let n = data.len() / dim;
    let mut out = vec![0.0; dim];
    for row in data.chunks_exact(dim) {
        for (o, &x) in out.iter_mut().zip(row) {
            *o += x;
        }
    }
    out.iter_mut().for_each(|o| *o /= n as f64);
    out
}

/// Returned by [`PagedKVCache::append`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AppendOutcome {
    /// Index of the block completed by this append, if any.
    pub completed_block: Option<usize>,
    /// Number of window summaries created by this append.
    pub new_windows: usize,
}

/// KV cache split into pages of `block_size` tokens.
///
/// Keys and values live in contiguous token-major buffers; block `i` is rows
/// `[i*B, (i+1)*B)`. Summaries exist only for complete blocks, and windows
/// only over tokens of complete blocks.
#[derive(Debug, Clone, PartialEq)]
pub struct PagedKVCache {
    layout: CacheLayout,
    keys: Vec<f64>,
    values: Vec<f64>,
    block_summaries: Vec<BlockSummary>,
    value_means: Vec<Vec<f64>>,
    window_summaries: Vec<BlockSummary>,
    length: usize,
}

const MAGIC: &[u8; 4] = b"SPKV";
const FORMAT_VERSION: u32 = 1;

impl PagedKVCache {
    pub fn new(layout: CacheLayout) -> Self {
        Self {
            layout,
            keys: Vec::new(),
            values: Vec::new(),
            block_summaries: Vec::new(),
            value_means: Vec::new(),
            window_summaries: Vec::new(),
            length: 0,
        }
    }

    pub fn layout(&self) -> CacheLayout {
        self.layout
    }

    pub fn head_dim(&self) -> usize {
        self.layout.head_dim
    }

    pub fn len(&self) -> usize {
        self.length
    }

    pub fn is_empty(&self) -> bool {
        self.length == 0
    }

    pub fn n_complete_blocks(&self) -> usize {
        self.length / self.layout.block_size
    }

    /// Tokens in the trailing, not yet complete block.
    pub fn partial_len(&self) -> usize {
        self.length % self.layout.block_size
    }

    pub fn append(&mut self, key: &[f64], value: &[f64]) -> Result<AppendOutcome> {
        let d = self.layout.head_dim;
        check_len("key", d, key.len())?;
        check_len("value", d, value.len())?;
        self.keys.extend_from_slice(key);
        self.values.extend_from_slice(value);
        self.length += 1;

        if !self.length.is_multiple_of(self.layout.block_size) {
            return Ok(AppendOutcome {
                completed_block: None,
                new_windows: 0,
            });
        }
        let b = self.n_complete_blocks() - 1;
        let (keys, values) = (self.block_keys_flat(b), self.block_values_flat(b));
        let summary = summarize_flat(keys, d)?;
        let vmean = mean_flat(values, d);
        self.block_summaries.push(summary);
        self.value_means.push(vmean);

        let target = self.layout.window_count(b + 1);
        let before = self.window_summaries.len();
        for j in before..target {
            let (lo, hi) = self.layout.window_span(j);
            let s = summarize_flat(&self.keys[lo * d..hi * d], d)?;
            self.window_summaries.push(s);
        }
        Ok(AppendOutcome {
            completed_block: Some(b),
            new_windows: target - before,
        })
    }

    /// Appends every row of `keys`/`values` in order.
    pub fn append_batch(&mut self, keys: &Matrix, values: &Matrix) -> Result<()> {
        check_len("batch rows", keys.rows(), values.rows())?;
        for (k, v) in keys.iter_rows().zip(values.iter_rows()) {
            self.append(k, v)?;
        }
        Ok(())
    }

    fn block_keys_flat(&self, b: usize) -> &[f64] {
        let w = self.layout.block_size * self.layout.head_dim;
        &self.keys[b * w..(b + 1) * w]
    }

    fn block_values_flat(&self, b: usize) -> &[f64] {
        let w = self.layout.block_size * self.layout.head_dim;
        &self.values[b * w..(b + 1) * w]
    }

    fn check_block(&self, b: usize) -> Result<()> {
        if b < self.n_complete_blocks() {
            Ok(())
        } else {
            Err(SplaError::IndexOutOfRange {
                index: b,
                n_blocks: self.n_complete_blocks(),
            })
        }
    }

    /// Key rows of complete block `b`.
    pub fn block_keys(&self, b: usize) -> Result<impl Iterator<Item = &[f64]> + '_> {
        self.check_block(b)?;
        Ok(self.block_keys_flat(b).chunks_exact(self.layout.head_dim))
    }

    /// Interleaved (key, value) rows of complete block `b`.
    pub fn block_tokens(&self, b: usize) -> Result<impl Iterator<Item = (&[f64], &[f64])> + '_> {
        self.check_block(b)?;
        let d = self.layout.head_dim;
        Ok(self
            .block_keys_flat(b)
            .chunks_exact(d)
            .zip(self.block_values_flat(b).chunks_exact(d)))
    }

    /// (key, value) rows of the trailing partial block.
    pub fn partial_tokens(&self) -> impl Iterator<Item = (&[f64], &[f64])> + '_ {
        let d = self.layout.head_dim;
        let start = self.n_complete_blocks() * self.layout.block_size * d;
        self.keys[start..]
            .chunks_exact(d)
            .zip(self.values[start..].chunks_exact(d))
    }

    /// All (key, value) rows in token order, complete blocks and partial.
    pub fn tokens(&self) -> impl Iterator<Item = (&[f64], &[f64])> + '_ {
        let d = self.layout.head_dim;
        self.keys.chunks_exact(d).zip(self.values.chunks_exact(d))
    }

    pub fn key(&self, t: usize) -> &[f64] {
        let d = self.layout.head_dim;
        &self.keys[t * d..(t + 1) * d]
    }

    pub fn value(&self, t: usize) -> &[f64] {
        let d = self.layout.head_dim;
        &self.values[t * d..(t + 1) * d]
    }

    /// All keys as an `length x d` matrix (copies).
    pub fn keys_matrix(&self) -> Matrix {
        Matrix::from_vec(self.length, self.layout.head_dim, self.keys.clone())
            .expect("buffer holds length x d scalars")
    }

    pub fn values_matrix(&self) -> Matrix {
        Matrix::from_vec(self.length, self.layout.head_dim, self.values.clone())
            .expect("buffer holds length x d scalars")
    }

    pub fn block_summaries(&self) -> &[BlockSummary] {
        &self.block_summaries
    }

    pub fn window_summaries(&self) -> &[BlockSummary] {
        &self.window_summaries
    }

    /// Mean value vector of each complete block.
    pub fn value_means(&self) -> &[Vec<f64>] {
        &self.value_means
    }

    /// Recomputes every summary from raw keys, in the same row order used at
    /// append time. Returns `(block_summaries, window_summaries)`.
    pub fn rebuild_summaries(&self) -> Result<(Vec<BlockSummary>, Vec<BlockSummary>)> {
        let d = self.layout.head_dim;
        let nb = self.n_complete_blocks();
        let blocks = (0..nb)
            .map(|b| summarize_flat(self.block_keys_flat(b), d))
            .collect::<Result<Vec<_>>>()?;
        let windows = (0..self.layout.window_count(nb))
            .map(|j| {
                let (lo, hi) = self.layout.window_span(j);
                summarize_flat(&self.keys[lo * d..hi * d], d)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok((blocks, windows))
    }

    /// Writes the flat little-endian fixture format.
    ///
    /// Layout: `b"SPKV"`, then u32 version, u32 d, u32 B, u32 C, u32 s,
    /// u64 length, followed by `length*d` f32 keys and `length*d` f32 values,
    /// token-major.
    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        let l = self.layout;
        w.write_all(MAGIC)?;
        for v in [FORMAT_VERSION, l.head_dim as u32, l.block_size as u32, l.window as u32, l.stride as u32] {
            w.write_all(&v.to_le_bytes())?;
        }
        w.write_all(&(self.length as u64).to_le_bytes())?;
        for &x in self.keys.iter().chain(&self.values) {
            w.write_all(&(x as f32).to_le_bytes())?;
        }
        Ok(())
    }

    /// Reads the format produced by [`write_to`](Self::write_to) and rebuilds
    /// summaries by replaying the appends.
    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(SplaError::Format("bad magic".into()));
        }
        let mut u32s = [0u32; 5];
        for v in &mut u32s {
            let mut b = [0u8; 4];
            r.read_exact(&mut b)?;
            *v = u32::from_le_bytes(b);
        }
        let [version, d, block, window, stride] = u32s;
        if version != FORMAT_VERSION {
            return Err(SplaError::Format(format!("unsupported version {version}")));
        }
        let mut b8 = [0u8; 8];
        r.read_exact(&mut b8)?;
        let length = u64::from_le_bytes(b8) as usize;
        let layout = CacheLayout {
            head_dim: d as usize,
            block_size: block as usize,
            window: window as usize,
            stride: stride as usize,
        };
        if layout.head_dim == 0 || layout.block_size == 0 || layout.stride == 0 {
            return Err(SplaError::Format("zero dimension in header".into()));
        }
        let n = length * layout.head_dim;
        let mut read_f32s = |count: usize| -> Result<Vec<f64>> {
            let mut out = Vec::with_capacity(count);
            let mut b = [0u8; 4];
            for _ in 0..count {
                r.read_exact(&mut b)?;
                out.push(f32::from_le_bytes(b) as f64);
            }
            Ok(out)
        };
        let keys = read_f32s(n)?;
        let values = read_f32s(n)?;
        let mut cache = PagedKVCache::new(layout);
        let dd = layout.head_dim;
        for (k, v) in keys.chunks_exact(dd).zip(values.chunks_exact(dd)) {
            cache.append(k, v)?;
        }
        Ok(cache)
    }
}
