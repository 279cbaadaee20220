//! CLI error taxonomy mapped onto process exit codes: 2 for configuration
//! problems, 3 for data problems, 4 for numeric failures.

use std::fmt;

#[derive(Debug)]
pub enum CliError {
    /// Bad configuration: unknown key, unparsable value, violated model
    /// constraint. Exit code 2.
    Config(String),
    /// Bad data: missing files, malformed records, label out of range.
    /// Exit code 3.
    Data(String),
    /// Numeric failure: non-finite loss or outputs. Exit code 4.
    Numeric(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Data(_) => 3,
            CliError::Numeric(_) => 4,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(msg) => write!(f, "config error: {msg}"),
            CliError::Data(msg) => write!(f, "data error: {msg}"),
            CliError::Numeric(msg) => write!(f, "numeric error: {msg}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<dimix_core::Error> for CliError {
    fn from(e: dimix_core::Error) -> Self {
        match e {
            dimix_core::Error::NonFinite(_) => CliError::Numeric(e.to_string()),
            _ => CliError::Config(e.to_string()),
        }
    }
}

pub type Result<T> = std::result::Result<T, CliError>;
