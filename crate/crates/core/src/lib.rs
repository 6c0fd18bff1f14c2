//! Block-sparse attention with Taylor-expansion block selection and a
//! residual linear attention branch over the unselected blocks.
//!
//! The crate is organized bottom-up:
//!
//! * [`cache`]: paged KV storage with per-block and per-window key statistics
//! * [`oracle`]: brute-force dense references
//! * [`selection`]: Taylor block scores, window pooling and top-k
//! * [`sparse`]: exact attention over selected blocks, fused with the
//!   selected linear state
//! * [`rla`]: feature maps, linear states and the subtraction readout
//! * [`spla`]: decode and prefill for the full composition
//! * [`baselines`]: truncation and overlap strategies
//! * [`decode_sim`]: analytical IO cost model

pub mod baselines;
pub mod cache;
pub mod config;
pub mod decode_sim;
pub mod error;
pub mod ledger;
pub mod oracle;
pub mod rla;
pub mod selection;
pub mod sparse;
pub mod spla;
pub mod tensor;

pub use cache::{compute_summary, BlockSummary, PagedKVCache};
pub use config::{AttentionConfig, CacheLayout, FeatureMap, Precision, ScoreGranularity, SparseNormalizer};
pub use error::{Result, SplaError};
pub use ledger::IoLedger;
pub use rla::LinearState;
pub use selection::{SelectionResult, TaylorOrder};
pub use spla::SplaState;
pub use tensor::Matrix;
