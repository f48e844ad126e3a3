//! Library half of the `ofs` binary: configuration, subcommands and the hierarchical
//! Poisson demo.

pub mod commands;
pub mod config;
pub mod poisson;

use thiserror::Error;

/// Failures reported by a subcommand, split by exit code.
#[derive(Debug, Error)]
pub enum CliError {
    /// Malformed or inconsistent configuration; exit code 2.
    #[error("config error: {0}")]
    Config(String),
    /// Anything that goes wrong once the configuration has been accepted; exit code 1.
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Runtime(_) => 1,
        }
    }
}

impl From<ofs_core::Error> for CliError {
    fn from(e: ofs_core::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;
