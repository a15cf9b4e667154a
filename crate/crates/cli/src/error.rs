//! CLI error taxonomy mapped onto process exit codes.

use std::fmt;

/// Exit codes: 0 success, 2 config error, 3 data error, 4 numerical failure.
#[derive(Debug)]
pub enum CliError {
    /// Bad or missing configuration: unparsable config document, unknown
    /// keys, invalid settings, referenced paths that do not exist.
    Config(String),
    /// Bad input data: malformed CSV, duplicate keys, mismatched key sets.
    Data(String),
    /// A computation failed: training aborted, non-finite values, undefined
    /// metrics, singular fits.
    Numerical(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Data(_) => 3,
            CliError::Numerical(_) => 4,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Config(_) => "config",
            CliError::Data(_) => "data",
            CliError::Numerical(_) => "numerical",
        }
    }

    pub fn message(&self) -> &str {
        match self {
            CliError::Config(m) | CliError::Data(m) | CliError::Numerical(m) => m,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        // Single machine-parsable line.
        write!(
            f,
            "error: code={} kind={} msg={:?}",
            self.exit_code(),
            self.kind(),
            self.message()
        )
    }
}

impl std::error::Error for CliError {}

pub type Result<T> = std::result::Result<T, CliError>;

/// Wrap a core error as a data problem (bad inputs).
pub fn data_err(e: impl fmt::Display) -> CliError {
    CliError::Data(e.to_string())
}

/// Wrap a core error as a numerical failure.
pub fn numerical_err(e: impl fmt::Display) -> CliError {
    CliError::Numerical(e.to_string())
}

/// Wrap an error as a configuration problem.
pub fn config_err(e: impl fmt::Display) -> CliError {
    CliError::Config(e.to_string())
}
