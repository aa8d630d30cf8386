use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),

    #[error("{}: {message}", path.display())]
    Config { path: PathBuf, message: String },

    #[error("cannot write {}: {source}", path.display())]
    Output { path: PathBuf, source: std::io::Error },

    #[error("trajectory {index} (seed {seed}): {source}")]
    Trajectory {
        index: usize,
        seed: u64,
        source: catprobe::Error,
    },

    #[error(transparent)]
    Numerical(#[from] catprobe::Error),

    #[error("validation failed: {0}")]
    Validation(String),
}

impl CliError {
    /// 1 for usage and configuration problems, 2 for numerical failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) | CliError::Config { .. } | CliError::Output { .. } => 1,
            CliError::Trajectory { .. } | CliError::Numerical(_) | CliError::Validation(_) => 2,
        }
    }
}
