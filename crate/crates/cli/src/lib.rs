//! Experiment driver: configuration loading, mode dispatch and artifact output.

pub mod config;
pub mod error;
pub mod modes;
pub mod output;

use std::path::PathBuf;

pub use config::{load_spec, ExperimentSpec, Mode, Settings};
pub use error::CliError;

/// Runs a resolved spec and writes its artifacts; returns the CSV paths.
pub fn run(mut spec: ExperimentSpec) -> Result<Vec<PathBuf>, CliError> {
    let artifacts = modes::run_mode(&mut spec)?;
    artifacts.iter().map(|a| output::write_artifact(&spec, a)).collect()
}
