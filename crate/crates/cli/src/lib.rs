//! Library side of the command-line harness: configuration, experiment
//! runners, built-in verification checks, and CSV output. The binary in
//! `main.rs` is a thin dispatcher over these.

pub mod checks;
pub mod config;
pub mod csvio;
pub mod experiments;

/// Harness-level error, carrying the process exit code.
///
/// Exit codes: 0 success, 1 configuration error, 2 numerical failure,
/// 3 verification-check failure.
#[derive(Debug)]
pub enum CliError {
    Config(String),
    Numerical(String),
    CheckFailed(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 1,
            CliError::Numerical(_) => 2,
            CliError::CheckFailed(_) => 3,
        }
    }

    pub fn io(e: std::io::Error) -> Self {
        CliError::Config(format!("i/o error: {e}"))
    }

    pub fn csv(e: csv::Error) -> Self {
        CliError::Config(format!("csv error: {e}"))
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "config error: {m}"),
            CliError::Numerical(m) => write!(f, "numerical failure: {m}"),
            CliError::CheckFailed(m) => write!(f, "check failure: {m}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<ovsmc::Error> for CliError {
    fn from(e: ovsmc::Error) -> Self {
        CliError::Numerical(e.to_string())
    }
}
