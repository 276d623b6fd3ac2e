//! Library side of the `stocheuler` command line tool: configuration,
//! the four experiment commands and their output files.

pub mod commands;
pub mod config;

use std::fmt;

pub use commands::{run, Command, Outcome};
pub use config::{ExperimentConfig, ModelBlock, PartitionBlock, Tolerances};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

pub const EXIT_OK: i32 = 0;
/// The fitted rate exponent fell outside the configured band.
pub const EXIT_OUT_OF_BAND: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
/// The run completed but its diagnostics are degenerate.
pub const EXIT_DEGENERATE: i32 = 3;
pub const EXIT_CAPABILITY: i32 = 4;
pub const EXIT_NUMERICAL: i32 = 5;

/// Environment variable capping the worker count (0 or unset: automatic).
pub const THREADS_VAR: &str = "STOCHEULER_THREADS";

#[derive(Debug, Clone, PartialEq)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    pub fn config(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_CONFIG,
            message: message.into(),
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.message)
    }
}

impl std::error::Error for CliError {}

impl From<stocheuler::Error> for CliError {
    fn from(e: stocheuler::Error) -> Self {
        use stocheuler::Error::*;
        let code = match &e {
            Domain(_) | ResourceBound { .. } => EXIT_CONFIG,
            Capability(_) => EXIT_CAPABILITY,
            Divergence { .. } | ReplicationDiverged { .. } | Accuracy(_) => EXIT_NUMERICAL,
        };
        Self {
            code,
            message: e.to_string(),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        Self::config(format!("i/o error: {e}"))
    }
}

/// Worker count from [`THREADS_VAR`]; unparsable values are a config error.
pub fn threads_from_env() -> Result<usize, CliError> {
    match std::env::var(THREADS_VAR) {
        Ok(v) if !v.trim().is_empty() => v
            .trim()
            .parse()
            .map_err(|_| CliError::config(format!("{THREADS_VAR} must be a nonnegative integer, got {v:?}"))),
        _ => Ok(0),
    }
}

/// Runs `f` on a dedicated pool of `threads` workers (0: rayon's default).
pub fn with_threads<R: Send>(threads: usize, f: impl FnOnce() -> R + Send) -> Result<R, CliError> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| CliError::config(format!("cannot start worker pool: {e}")))?;
    Ok(pool.install(f))
}
