//! Experiment orchestration for the `fvcal` command.
//!
//! [`config`] reads study files, [`runner`] drives single calibrations with
//! per-iteration logs, and [`studies`] implements the commands on top of
//! them. Everything a command writes except wall-time tables is a pure
//! function of the config and seed.

pub mod config;
pub mod invariants;
pub mod output;
pub mod runner;
pub mod studies;

pub use config::{Method, RunConfig};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("configuration: {0}")]
    Config(String),

    #[error(transparent)]
    Core(#[from] fvcal_core::Error),

    #[error("io: {0}")]
    Io(#[from] std::io::Error),

    #[error("every calibration failed: {0}")]
    AllFailed(String),
}

impl CliError {
    /// 2 for bad input, 3 for solver failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Core(e) if e.is_solver_failure() => 3,
            CliError::AllFailed(_) => 3,
            _ => 2,
        }
    }
}

pub type Result<T, E = CliError> = std::result::Result<T, E>;
