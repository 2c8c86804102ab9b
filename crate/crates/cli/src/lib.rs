//! Experiment runner for the clipnet training tracks.

pub mod config;
pub mod error;
pub mod report;
pub mod runner;

pub use config::{DataSource, ExperimentConfig, Track};
pub use error::{CliError, CliResult};
pub use report::{aggregate, report, Report};
pub use runner::{run, RunOptions, SeedSummary};
