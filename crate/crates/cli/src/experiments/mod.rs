pub mod divergence;
pub mod equivalence;
pub mod io_report;
pub mod recall;

use spla::Precision;

use crate::settings::Settings;

/// Options shared by every command; `None` falls back to the settings file.
#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub seed: u64,
    pub trials: Option<usize>,
    pub precision: Precision,
    pub block_size: Option<usize>,
    pub top_k: Option<usize>,
    /// Restricts a grid command to its first `N` rows and `M` columns.
    pub grid: Option<(usize, usize)>,
}

/// CSV output of a command plus the outcome of its embedded checks.
#[derive(Debug, Clone, PartialEq)]
pub struct Report {
    pub csv: String,
    /// One line per embedded check, `PASS ...` or `FAIL ...`.
    pub checks: Vec<String>,
    pub passed: bool,
}

impl Report {
    pub(crate) fn new(csv: String) -> Self {
        Self {
            csv,
            checks: Vec::new(),
            passed: true,
        }
    }

    pub(crate) fn check(&mut self, ok: bool, what: String) {
        self.checks.push(format!("{} {}", if ok { "PASS" } else { "FAIL" }, what));
        self.passed &= ok;
    }
}

/// `{:.6e}` rendering used by every CSV so outputs diff cleanly.
pub(crate) fn sci(x: f64) -> String {
    format!("{x:.6e}")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Equivalence,
    Recall,
    Divergence,
    IoReport,
}

pub fn run_command(command: Command, opts: &RunOptions, settings: &Settings) -> spla::Result<Report> {
    match command {
        Command::Equivalence => equivalence::run(opts, settings),
        Command::Recall => recall::run(opts, settings),
        Command::Divergence => divergence::run(opts, settings),
        Command::IoReport => io_report::run(opts, settings),
    }
}
