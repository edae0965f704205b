//! Command-line front end: data ingestion, simulation, single fits with
//! private inference, and the replication experiment harness.

use std::fmt;

pub mod config;
pub mod experiments;

/// Process-level error classification. Exit codes: 2 for configuration
/// problems, 3 for data problems, 4 when the only failure was optimizer
/// divergence.
#[derive(Debug)]
pub enum CliError {
    Config(String),
    Data(dpmest::Error),
    Divergence(dpmest::Error),
    Runtime(dpmest::Error),
    Io(std::io::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::Runtime(_) => 2,
            CliError::Data(_) | CliError::Io(_) => 3,
            CliError::Divergence(_) => 4,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(msg) => write!(f, "configuration error: {msg}"),
            CliError::Data(e) => write!(f, "data error: {e}"),
            CliError::Divergence(e) => write!(f, "{e}"),
            CliError::Runtime(e) => write!(f, "{e}"),
            CliError::Io(e) => write!(f, "i/o error: {e}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<dpmest::Error> for CliError {
    fn from(e: dpmest::Error) -> Self {
        use dpmest::Error::*;
        match e {
            Parse { .. } | Schema(_) | DegenerateColumn(_) | Io(_) | Csv(_) => CliError::Data(e),
            Diverged { .. } => CliError::Divergence(e),
            InvalidBudget(_) | BudgetExceeded { .. } | InvalidInput(_) | InvalidParameter(_)
            | InvalidWeight(_) => CliError::Config(format!("{e}")),
            NotPositiveDefinite(_) => CliError::Runtime(e),
        }
    }
}
