//! Command-line front end: experiments declared in TOML configs, seeded
//! solver ensembles fanned over worker threads, diagnostic checks, CSV
//! traces, and a versioned summary JSON.
//!
//! Exit codes are a stable contract: 0 all good, 1 an enabled check failed,
//! 2 configuration or usage error, 3 solver divergence.

use std::fmt;

use isarah::diagnostics::DiagnosticsError;
use isarah::solvers::SolverError;

pub mod config;
pub mod output;
pub mod runner;
pub mod suites;

#[derive(Debug)]
pub enum CliError {
    /// Bad config, bad flags, missing constants, unusable problem files.
    Config(String),
    /// Filesystem trouble writing or reading results.
    Io(String),
    /// The run finished but an enabled check failed.
    ChecksFailed(usize),
    /// An iterate went non-finite.
    Diverged { stage: usize, step: usize },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::ChecksFailed(_) => 1,
            CliError::Config(_) | CliError::Io(_) => 2,
            CliError::Diverged { .. } => 3,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(msg) => write!(f, "config error: {msg}"),
            CliError::Io(msg) => write!(f, "i/o error: {msg}"),
            CliError::ChecksFailed(n) => {
                write!(f, "{n} check{} failed", if *n == 1 { "" } else { "s" })
            }
            CliError::Diverged { stage, step } => {
                write!(f, "iterate diverged at stage {stage}, inner step {step}")
            }
        }
    }
}

impl std::error::Error for CliError {}

impl From<SolverError> for CliError {
    fn from(e: SolverError) -> Self {
        match e {
            SolverError::Diverged { stage, step, .. } => CliError::Diverged { stage, step },
            other => CliError::Config(other.to_string()),
        }
    }
}

impl From<DiagnosticsError> for CliError {
    fn from(e: DiagnosticsError) -> Self {
        match e {
            DiagnosticsError::Solver(SolverError::Diverged { stage, step, .. }) => {
                CliError::Diverged { stage, step }
            }
            other => CliError::Config(other.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}
