use thiserror::Error;

#[derive(Error, Debug)]
pub enum SplaError {
    #[error("shape mismatch in {what}: expected {expected}, got {got}")]
    Shape {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("cannot summarize an empty span of keys")]
    EmptySpan,
    #[error("attention over an empty context")]
    EmptyContext,
    #[error("block index {index} out of range ({n_blocks} complete blocks)")]
    IndexOutOfRange { index: usize, n_blocks: usize },
    #[error("block score normalizer degenerate for head {head} (Z = {normalizer})")]
    DegenerateDistribution { head: usize, normalizer: f64 },
    #[error("inconsistent linear states: selected covers {selected} tokens, global covers {global}")]
    InconsistentState { selected: usize, global: usize },
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("malformed cache file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, SplaError>;

pub(crate) fn check_len(what: &'static str, expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(SplaError::Shape {
            what,
            expected,
            got,
        })
    }
}
