use std::fmt;
use std::io;
use std::path::Path;

use hierls_core::Error as CoreError;

/// Driver-level failure, carrying the process exit code. Configuration
/// problems (bad manifest, missing inputs, unusable files) exit with 2,
/// numerical failures with 3, and a chain that retained no samples with 4.
#[derive(Debug)]
pub enum CliError {
    Config(String),
    Numerical(String),
    EmptyChain(String),
}

pub type CliResult<T> = Result<T, CliError>;

impl CliError {
    pub fn config(msg: impl Into<String>) -> Self {
        CliError::Config(msg.into())
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Numerical(_) => 3,
            CliError::EmptyChain(_) => 4,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "configuration error: {m}"),
            CliError::Numerical(m) => write!(f, "numerical failure: {m}"),
            CliError::EmptyChain(m) => write!(f, "empty chain: {m}"),
        }
    }
}

impl From<CoreError> for CliError {
    fn from(e: CoreError) -> Self {
        match e {
            CoreError::Numerical(m) => CliError::Numerical(m),
            other => CliError::Config(other.to_string()),
        }
    }
}

/// Wraps an io failure with the path and the action that failed.
pub fn io_err(action: &str, path: &Path, e: io::Error) -> CliError {
    CliError::Config(format!("{action} {}: {e}", path.display()))
}
