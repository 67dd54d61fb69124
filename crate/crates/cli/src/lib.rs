//! Experiment harness behind the `overlap-reg` binary.

pub mod commands;
pub mod config;

use std::path::{Path, PathBuf};

pub use commands::{run_register, run_synth, run_timing, run_weights, RESULTS_FILE};
pub use config::ExperimentConfig;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config: {0}")]
    Config(String),
    #[error(transparent)]
    Core(#[from] overlap_reg::Error),
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
}

impl CliError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}
