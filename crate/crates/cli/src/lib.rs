//! Experiment harness for the `spla` crate: seeded synthetic workloads,
//! the four standard experiments, and their CSV reports.

pub mod experiments;
pub mod settings;
pub mod stats;
pub mod synthetic;

pub use experiments::{run_command, Command, Report, RunOptions};
pub use settings::Settings;
