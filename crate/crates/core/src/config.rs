//! Shape and sparsity hyperparameters.

use crate::error::{Result, SplaError};

/// Feature map used by the residual linear attention branch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum FeatureMap {
    /// Elementwise `exp(x - max(x))`.
    Exponential,
    /// Softmax over the feature dimension.
    #[default]
    SoftmaxNormalized,
}

/// Precision class.
///
/// `High` runs everything in f64. `Low` rounds queries, keys and values to
/// bfloat16 on ingress and accumulates linear states in f32, while softmax
/// accumulators stay in f64.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Precision {
    #[default]
    High,
    Low,
}

impl Precision {
    /// Rounds a scalar to the storage format of this precision class.
    #[inline]
    pub fn quantize(self, x: f64) -> f64 {
        match self {
            Precision::High => x,
            Precision::Low => half::bf16::from_f64(x).to_f64(),
        }
    }

    pub fn quantize_vec(self, xs: &[f64]) -> Vec<f64> {
        xs.iter().map(|&x| self.quantize(x)).collect()
    }

    /// `acc + x` evaluated in the accumulator format of this class.
    #[inline]
    pub fn accumulate(self, acc: f64, x: f64) -> f64 {
        match self {
            Precision::High => acc + x,
            Precision::Low => ((acc as f32) + (x as f32)) as f64,
        }
    }

    /// `a * b` evaluated in the accumulator format of this class.
    #[inline]
    pub fn mul(self, a: f64, b: f64) -> f64 {
        match self {
            Precision::High => a * b,
            Precision::Low => ((a as f32) * (b as f32)) as f64,
        }
    }
}

/// Which summaries feed block scoring.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ScoreGranularity {
    /// Strided windows of `window` tokens, max-pooled to blocks.
    #[default]
    Windows,
    /// Whole-block summaries scored directly (ablation).
    Blocks,
}

/// Normalizer used by the sparse exact branch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SparseNormalizer {
    /// Softmax over the attended union only.
    #[default]
    Restricted,
    /// Softmax numerators over the attended union, normalizer over the whole
    /// context (ablation; reads every cached key).
    Global,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttentionConfig {
    pub head_dim: usize,
    /// Query heads per KV head.
    pub group_size: usize,
    pub block_size: usize,
    pub window: usize,
    pub stride: usize,
    pub top_k: usize,
    pub n_sink: usize,
    pub n_recent: usize,
    pub feature_map: FeatureMap,
    pub precision: Precision,
    pub granularity: ScoreGranularity,
    pub normalizer: SparseNormalizer,
}

impl Default for AttentionConfig {
    fn default() -> Self {
        Self {
            head_dim: 128,
            group_size: 5,
            block_size: 128,
            window: 32,
            stride: 16,
            top_k: 32,
            n_sink: 1,
            n_recent: 4,
            feature_map: FeatureMap::SoftmaxNormalized,
            precision: Precision::High,
            granularity: ScoreGranularity::Windows,
            normalizer: SparseNormalizer::Restricted,
        }
    }
}

impl AttentionConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("head_dim", self.head_dim),
            ("group_size", self.group_size),
            ("block_size", self.block_size),
            ("window", self.window),
            ("stride", self.stride),
            ("top_k", self.top_k),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(SplaError::InvalidConfig(format!("{name} must be positive")));
            }
        }
        if !self.window.is_multiple_of(self.stride) {
            return Err(SplaError::InvalidConfig(format!(
                "stride {} must divide window {}",
                self.stride, self.window
            )));
        }
        if !self.block_size.is_multiple_of(self.stride) {
            return Err(SplaError::InvalidConfig(format!(
                "stride {} must divide block size {}",
                self.stride, self.block_size
            )));
        }
        if self.window > self.block_size {
            return Err(SplaError::InvalidConfig(format!(
                "window {} exceeds block size {}",
                self.window, self.block_size
            )));
        }
        if self.top_k < self.n_sink + self.n_recent {
            return Err(SplaError::InvalidConfig(format!(
                "top_k {} smaller than forced blocks {}",
                self.top_k,
                self.n_sink + self.n_recent
            )));
        }
        Ok(())
    }

    pub fn layout(&self) -> CacheLayout {
        CacheLayout {
            head_dim: self.head_dim,
            block_size: self.block_size,
            window: self.window,
            stride: self.stride,
        }
    }
}

/// The subset of the config that fixes cache geometry.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CacheLayout {
    pub head_dim: usize,
    pub block_size: usize,
    pub window: usize,
    pub stride: usize,
}

impl CacheLayout {
    /// Number of complete strided windows covering `n_blocks` complete blocks.
    pub fn window_count(&self, n_blocks: usize) -> usize {
        let tokens = n_blocks * self.block_size;
        if tokens < self.window {
            0
        } else {
            (tokens - self.window) / self.stride + 1
        }
    }

    /// Token span `[start, end)` of window `j`.
    pub fn window_span(&self, j: usize) -> (usize, usize) {
        let start = j * self.stride;
        (start, start + self.window)
    }

    /// Windows whose span intersects block `b`, clipped to the windows that
    /// exist over `n_blocks` complete blocks.
    pub fn windows_of_block(&self, b: usize, n_blocks: usize) -> std::ops::Range<usize> {
        let lo_tok = b * self.block_size;
        let hi_tok = lo_tok + self.block_size;
        // j*s + C > lo  <=>  j > (lo - C)/s
        let first = if lo_tok + self.stride > self.window {
            (lo_tok + self.stride - self.window) / self.stride
        } else {
            0
        };
        // j*s < hi  <=>  j <= (hi - 1)/s
        let last_excl = ((hi_tok - 1) / self.stride + 1).min(self.window_count(n_blocks));
        first..last_excl.max(first)
    }
}
