//! Batch front end: configuration ingestion, solver and verification runs,
//! approximation sweeps and CSV reports.

pub mod commands;
pub mod config;
pub mod report;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),

    #[error("invalid configuration:\n  {}", .0.join("\n  "))]
    Config(Vec<String>),

    /// A checked property failed beyond its declared tolerance.
    #[error("{0}")]
    Failed(String),

    #[error(transparent)]
    Core(#[from] mmdiv_core::Error),

    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

impl CliError {
    /// 1 for property failures, 2 for usage and configuration errors.
    pub fn exit_code(&self) -> i32 {
        use mmdiv_core::Error as E;
        match self {
            CliError::Usage(_) | CliError::Config(_) | CliError::Io(_) | CliError::Csv(_) => 2,
            CliError::Failed(_) => 1,
            CliError::Core(e) => match e {
                E::InvalidArgument(_) | E::InvalidModel(_) | E::Io(_) => 2,
                _ => 1,
            },
        }
    }
}
