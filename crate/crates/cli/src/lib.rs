//! Experiment runner: configuration, batch execution, metric reporting.

#![forbid(unsafe_code)]

pub mod config;
pub mod eval;
pub mod run;

use thiserror::Error;

pub use config::{ExperimentConfig, Overrides};
pub use eval::{cmd_eval, cmd_report, EvalArgs, EvalOutcome, ReportRecord};
pub use run::{cmd_ablate_retention, cmd_harvest_bank, cmd_run, Manifest, RunOutcome};

/// Command failures, split by exit code: validation problems exit 1, runtime
/// failures exit 2.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Validation(String),
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) => 1,
            CliError::Runtime(_) => 2,
        }
    }
}
