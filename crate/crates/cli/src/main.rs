use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Parser, Subcommand, ValueEnum};
use spla::Precision;
use spla_bench::{run_command, Command, RunOptions, Settings};

#[derive(Parser, Debug)]
#[command(name = "spla-bench", version, about = "Sparse plus linear attention experiments")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,

    #[arg(long, global = true, env = "SPLA_SEED", default_value_t = 0)]
    seed: u64,

    /// Overrides the command's trial count.
    #[arg(long, global = true, env = "SPLA_TRIALS")]
    trials: Option<usize>,

    #[arg(long, global = true, env = "SPLA_PRECISION", value_enum, default_value_t = PrecisionArg::High)]
    precision: PrecisionArg,

    #[arg(long, global = true, env = "SPLA_BLOCK_SIZE")]
    block_size: Option<usize>,

    #[arg(long, global = true, env = "SPLA_TOPK")]
    topk: Option<usize>,

    /// First N sequence lengths by first M batch sizes, as `NxM` (io-report).
    #[arg(long, global = true, env = "SPLA_GRID", value_parser = parse_grid)]
    grid: Option<(usize, usize)>,

    /// CSV destination; stdout when omitted.
    #[arg(long, global = true, env = "SPLA_OUT")]
    out: Option<PathBuf>,

    /// TOML file replacing the embedded defaults.
    #[arg(long, global = true, env = "SPLA_CONFIG")]
    config: Option<PathBuf>,
}

#[derive(Subcommand, Debug, Clone, Copy)]
enum Cmd {
    /// Subtraction identity and dense recovery over random trials.
    Equivalence,
    /// Recall@k of block rankings against the true attention mass.
    Recall,
    /// Deviation from dense attention versus context length.
    Divergence,
    /// Decode traffic model with live ledger validation.
    IoReport,
}

#[derive(ValueEnum, Debug, Clone, Copy)]
enum PrecisionArg {
    High,
    Low,
}

fn parse_grid(s: &str) -> Result<(usize, usize), String> {
    let (n, m) = s
        .split_once(['x', 'X'])
        .ok_or_else(|| format!("expected NxM, got {s:?}"))?;
    let n: usize = n.trim().parse().map_err(|e| format!("{n:?}: {e}"))?;
    let m: usize = m.trim().parse().map_err(|e| format!("{m:?}: {e}"))?;
    if n == 0 || m == 0 {
        return Err("grid dimensions must be positive".into());
    }
    Ok((n, m))
}

fn main() -> ExitCode {
    match run() {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn run() -> anyhow::Result<bool> {
    let cli = Cli::parse();
    let settings = match &cli.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .with_context(|| format!("reading {}", path.display()))?;
            Settings::from_toml(&text).with_context(|| format!("parsing {}", path.display()))?
        }
        None => Settings::default(),
    };
    if cli.trials == Some(0) {
        bail!("--trials must be positive");
    }
    let opts = RunOptions {
        seed: cli.seed,
        trials: cli.trials,
        precision: match cli.precision {
            PrecisionArg::High => Precision::High,
            PrecisionArg::Low => Precision::Low,
        },
        block_size: cli.block_size,
        top_k: cli.topk,
        grid: cli.grid,
    };
    let command = match cli.command {
        Cmd::Equivalence => Command::Equivalence,
        Cmd::Recall => Command::Recall,
        Cmd::Divergence => Command::Divergence,
        Cmd::IoReport => Command::IoReport,
    };
    let report = run_command(command, &opts, &settings)?;
    match &cli.out {
        Some(path) => std::fs::write(path, &report.csv)
            .with_context(|| format!("writing {}", path.display()))?,
        None => print!("{}", report.csv),
    }
    for line in &report.checks {
        eprintln!("{line}");
    }
    Ok(report.passed)
}
