//! Batch front end for the hedging pipeline: fit per-episode models, simulate
//! price paths, and price an option on them. Every output directory gets a
//! `meta.json` sidecar with the config hash, seed and crate version.

pub mod commands;
pub mod config;

use std::io;
use std::path::PathBuf;

use thiserror::Error;

pub use commands::{fit_bdnn, fit_vhmn, price, simulate, PriceReport, PriceSource};
pub use config::PipelineConfig;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: io::Error },
    #[error("{0}")]
    Compute(String),
}

impl CliError {
    /// 1 for numerical failures, 2 for bad input or IO.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Compute(_) => 1,
            CliError::Usage(_) | CliError::Io { .. } => 2,
        }
    }
}
