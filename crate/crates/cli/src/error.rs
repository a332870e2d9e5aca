use std::fmt;

use wsfn_core::Error as CoreError;

/// Failure classes with their process exit codes.
#[derive(Debug)]
pub enum CliError {
    /// Malformed or inconsistent configuration, unreadable inputs, unwritable outputs.
    Config(String),
    /// A run hit a numerical failure; partial traces were kept.
    Numeric(String),
    /// The property suite reported failures.
    Verify(String),
}

impl CliError {
    pub fn config(msg: impl Into<String>) -> Self {
        CliError::Config(msg.into())
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Verify(_) => 1,
            CliError::Config(_) => 2,
            CliError::Numeric(_) => 3,
        }
    }

    /// Objective construction and similar setup failures.
    pub fn from_core(context: &str, e: CoreError) -> Self {
        match e {
            CoreError::Numeric(_) | CoreError::ResampleCap { .. } => CliError::Numeric(format!("{context}: {e}")),
            _ => CliError::Config(format!("{context}: {e}")),
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(m) | CliError::Numeric(m) | CliError::Verify(m) => f.write_str(m),
        }
    }
}

impl std::error::Error for CliError {}
