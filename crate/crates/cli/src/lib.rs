//! Experiment runner for the `aflow` binary: configuration, persistent
//! outputs and the binary checkpoint container.

pub mod checkpoint;
pub mod commands;
pub mod config;
pub mod output;

use std::path::PathBuf;

pub use checkpoint::{Checkpoint, CheckpointHeader};
pub use commands::{cmd_diagnose, cmd_run, cmd_spectrum, cmd_verify, RunSummary};
pub use config::{ExperimentConfig, Scenario};

/// Environment variable holding the worker thread count.
pub const THREADS_ENV: &str = "AFLOW_THREADS";

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("checkpoint format error: {0}")]
    Format(String),
    #[error("checkpoint version {found} not supported (expected {expected})")]
    Version { expected: u32, found: u32 },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Flow(#[from] aflow_core::FlowError),
    #[error("run aborted: {0}")]
    Aborted(String),
    #[error("verification failed: {0}")]
    VerifyFailed(String),
    #[error("serialization: {0}")]
    Serialize(String),
}

impl CliError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit status for this error.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Format(_) | CliError::Version { .. } => 3,
            CliError::Aborted(_) => 4,
            CliError::VerifyFailed(_) => 5,
            _ => 1,
        }
    }
}

pub type Result<T> = std::result::Result<T, CliError>;

/// Sizes the global rayon pool from `AFLOW_THREADS` when set.
pub fn init_threads() -> Result<Option<usize>> {
    let Ok(raw) = std::env::var(THREADS_ENV) else {
        return Ok(None);
    };
    let n: usize = raw
        .trim()
        .parse()
        .map_err(|_| CliError::Config(format!("{THREADS_ENV} must be a positive integer, got {raw:?}")))?;
    if n == 0 {
        return Err(CliError::Config(format!("{THREADS_ENV} must be positive")));
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::Config(format!("thread pool: {e}")))?;
    Ok(Some(n))
}
