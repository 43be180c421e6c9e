//! Error-to-exit-code mapping.
//!
//! The exit-code contract is stable for scripting: 0 success, 1 I/O failure,
//! 2 validation or parse failure, 3 non-convergence under --strict.

use std::fmt;

#[derive(Debug)]
pub enum CliError {
    Io(String),
    Validation(String),
    NonConvergence(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Io(_) => 1,
            CliError::Validation(_) => 2,
            CliError::NonConvergence(_) => 3,
        }
    }

    pub fn io(context: &str, err: std::io::Error) -> Self {
        CliError::Io(format!("{context}: {err}"))
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Io(msg) => write!(f, "I/O error: {msg}"),
            CliError::Validation(msg) => write!(f, "{msg}"),
            CliError::NonConvergence(msg) => write!(f, "{msg}"),
        }
    }
}

impl From<varhsmm::Error> for CliError {
    fn from(e: varhsmm::Error) -> Self {
        CliError::Validation(e.to_string())
    }
}

pub type CliResult<T> = Result<T, CliError>;
