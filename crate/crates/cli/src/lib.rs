//! Library side of the `nfisac` command: scenario configuration, the
//! train / sense / evaluate / cube-dump pipeline and its artifacts.

pub mod cache;
pub mod commands;
pub mod config;

use std::fmt;

pub use config::ScenarioConfig;

/// Exit codes are a stable contract.
pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;
pub const EXIT_COVERAGE: i32 = 4;

#[derive(Debug)]
pub enum CliError {
    Config(String),
    Numerical(String),
    Coverage(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => EXIT_CONFIG,
            CliError::Numerical(_) => EXIT_NUMERICAL,
            CliError::Coverage(_) => EXIT_COVERAGE,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "configuration error: {m}"),
            CliError::Numerical(m) => write!(f, "numerical error: {m}"),
            CliError::Coverage(m) => write!(f, "coverage error: {m}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<nfisac_core::Error> for CliError {
    fn from(e: nfisac_core::Error) -> Self {
        use nfisac_core::Error as E;
        match e {
            E::NoCoverage => CliError::Coverage(e.to_string()),
            E::Io(_) => CliError::Numerical(e.to_string()),
            _ if e.is_numerical() => CliError::Numerical(e.to_string()),
            _ => CliError::Config(e.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Numerical(format!("i/o: {e}"))
    }
}
