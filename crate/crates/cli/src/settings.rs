//! Experiment defaults, loaded from `config/defaults.toml`.

use serde::Deserialize;

pub const DEFAULTS_TOML: &str = include_str!("../config/defaults.toml");

#[derive(Debug, Clone, Deserialize, PartialEq)]
pub struct Settings {
    pub tolerances: Tolerances,
    pub equivalence: EquivalenceSettings,
    pub recall: RecallSettings,
    pub divergence: DivergenceSettings,
    pub io_report: IoReportSettings,
}

#[derive(Debug, Clone, Deserialize, PartialEq)]
pub struct Tolerances {
    pub rla_high: f64,
    pub rla_low: f64,
    pub dense_recovery: f64,
}

#[derive(Debug, Clone, Deserialize, PartialEq)]
pub struct EquivalenceSettings {
    pub trials: usize,
    pub head_dims: Vec<usize>,
    pub min_blocks: usize,
    pub max_blocks: usize,
    pub block_sizes: Vec<usize>,
    pub group_size: usize,
}

#[derive(Debug, Clone, Deserialize, PartialEq)]
pub struct RecallSettings {
    pub trials: usize,
    pub head_dim: usize,
    pub group_size: usize,
    pub n_blocks: usize,
    pub block_size: usize,
    pub top_k: usize,
    pub query_norm: f64,
    pub mean_scale: f64,
    pub std_min: f64,
    pub std_max: f64,
}

#[derive(Debug, Clone, Deserialize, PartialEq)]
pub struct DivergenceSettings {
    pub trials: usize,
    pub calibration_trials: usize,
    pub head_dim: usize,
    pub group_size: usize,
    pub block_size: usize,
    pub window: usize,
    pub stride: usize,
    pub top_k: usize,
    pub n_sink: usize,
    pub n_recent: usize,
    pub block_multiples: Vec<usize>,
    pub query_norm: f64,
    pub needles: usize,
    pub needle_score: f64,
    pub sink_score: f64,
    pub tail_key_std: f64,
    pub tail_value_noise: f64,
    pub min_spearman: f64,
    pub min_win_fraction: f64,
    pub short_tolerance: f64,
}

#[derive(Debug, Clone, Deserialize, PartialEq)]
pub struct IoReportSettings {
    pub seq_lens: Vec<usize>,
    pub batches: Vec<usize>,
    pub kv_heads: usize,
    pub bytes_per_element: f64,
    pub hbm_bandwidth: f64,
    pub param_bytes: f64,
    pub validation_head_dim: usize,
}

impl Settings {
    pub fn from_toml(text: &str) -> anyhow::Result<Self> {
        Ok(toml::from_str(text)?)
    }
}

impl Default for Settings {
    fn default() -> Self {
        Self::from_toml(DEFAULTS_TOML).expect("embedded defaults parse")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn embedded_defaults_parse() {
        let s = Settings::default();
        assert_eq!(s.equivalence.trials, 1000);
        assert_eq!(s.divergence.block_multiples, vec![4, 8, 16, 32, 64]);
    }
}
