//! Experiment runner for the peer elicitation game simulator.
//!
//! `peg simulate|verify|sweep|regret --config <file>` reads a JSON
//! [`config::ExperimentConfig`], runs the requested workflow and writes CSV
//! series plus a JSON summary into the output directory.

use std::fmt;
use std::path::Path;

pub mod commands;
pub mod config;
pub mod output;
pub mod verify;

pub use commands::{run, Command, Outcome, RunOptions};
pub use config::{parse_config, ConfigError, ExperimentConfig};

pub const EXIT_OK: u8 = 0;
pub const EXIT_VERIFY_FAILED: u8 = 1;
pub const EXIT_CONFIG: u8 = 2;
pub const EXIT_RUNTIME: u8 = 3;

pub const SEED_ENV: &str = "PEG_SEED";

#[derive(Debug)]
pub enum CliError {
    Config(ConfigError),
    Runtime(String),
}

impl CliError {
    pub fn io(path: &Path, e: std::io::Error) -> Self {
        CliError::Runtime(format!("{}: {e}", path.display()))
    }

    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => EXIT_CONFIG,
            CliError::Runtime(_) => EXIT_RUNTIME,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(e) => write!(f, "{e}"),
            CliError::Runtime(m) => write!(f, "runtime error: {m}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Config(e)
    }
}

impl From<peg_core::PegError> for CliError {
    fn from(e: peg_core::PegError) -> Self {
        CliError::Runtime(e.to_string())
    }
}

/// `--seed` beats `PEG_SEED`, which beats the config file.
pub fn resolve_seed(flag: Option<u64>, env: Option<&str>, config_seed: u64) -> Result<u64, ConfigError> {
    if let Some(s) = flag {
        return Ok(s);
    }
    match env.map(str::trim) {
        None | Some("") => Ok(config_seed),
        Some(v) => v.parse().map_err(|_| ConfigError::Validation {
            field: SEED_ENV.into(),
            message: format!("not an unsigned integer: {v:?}"),
        }),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seed_precedence() {
        assert_eq!(resolve_seed(Some(1), Some("2"), 3), Ok(1));
        assert_eq!(resolve_seed(None, Some("2"), 3), Ok(2));
        assert_eq!(resolve_seed(None, None, 3), Ok(3));
        assert_eq!(resolve_seed(None, Some(""), 3), Ok(3));
        assert!(matches!(
            resolve_seed(None, Some("x"), 3),
            Err(ConfigError::Validation { field, .. }) if field == SEED_ENV
        ));
    }
}
