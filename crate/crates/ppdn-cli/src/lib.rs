//! Library side of the experiment harness; the `ppdn` binary is a thin
//! argument parser over these modules.

pub mod checkpoint;
pub mod commands;
pub mod config;
pub mod experiment;
pub mod report;

use thiserror::Error;

/// Harness-level failures, classified by exit code.
#[derive(Debug, Error)]
pub enum CliError {
    /// Usage or configuration problem (exit 1).
    #[error("{0}")]
    Config(String),
    /// Numerical failure: non-finite values or a failed gradient check
    /// (exit 2).
    #[error("{0}")]
    Numerical(String),
    /// The compared optimizers came out in the wrong order (exit 3).
    #[error("{0}")]
    Ordering(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 1,
            CliError::Numerical(_) => 2,
            CliError::Ordering(_) => 3,
        }
    }
}

impl From<ppdn::Error> for CliError {
    fn from(e: ppdn::Error) -> Self {
        match e {
            ppdn::Error::NonFinite { .. } | ppdn::Error::NonFiniteUpdate { .. } => {
                CliError::Numerical(e.to_string())
            }
            other => CliError::Config(other.to_string()),
        }
    }
}
