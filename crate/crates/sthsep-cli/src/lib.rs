//! Library half of the `sthsep` binary: synthetic dataset generation,
//! reference baselines, metrics, config file parsing, and the experiment
//! runner. Everything here is callable from tests; `main.rs` only parses
//! arguments and maps errors to exit codes.

pub mod baselines;
pub mod config_file;
pub mod metrics;
pub mod report;
pub mod runner;
pub mod synth;

use std::fmt;

/// Failures split by stage so the binary can honor the exit-code contract:
/// 2 for anything wrong with the invocation, its config, or its input
/// files; 1 for failures after the inputs were accepted.
#[derive(Debug)]
pub enum CliError {
    Parse(anyhow::Error),
    Runtime(anyhow::Error),
}

pub type CliResult<T> = Result<T, CliError>;

impl CliError {
    pub fn parse(err: impl Into<anyhow::Error>) -> Self {
        CliError::Parse(err.into())
    }

    pub fn runtime(err: impl Into<anyhow::Error>) -> Self {
        CliError::Runtime(err.into())
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Parse(_) => 2,
            CliError::Runtime(_) => 1,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Parse(e) => write!(f, "{e:#}"),
            CliError::Runtime(e) => write!(f, "{e:#}"),
        }
    }
}

impl std::error::Error for CliError {}
