//! Command-line front end for the flow classification toolkit: training,
//! evaluation, cross-validation, batch prediction, the streaming gatekeeper,
//! and synthetic dataset generation.

pub mod commands;
pub mod config;
pub mod synth;

use thiserror::Error;

/// Errors split by exit code: usage and validation problems exit 2,
/// runtime failures exit 3.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Runtime(_) => 3,
        }
    }
}
