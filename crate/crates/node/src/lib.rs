//! Networked gridmarket node: TCP transport between replicas, the
//! household agent loop, and the explorer/agent HTTP API.

pub mod agent;
pub mod codec;
pub mod config;
pub mod data;
pub mod http;
pub mod keyfile;
pub mod net;
pub mod runtime;

use std::path::{Path, PathBuf};

use gridmarket_core::ledger::LedgerError;
use gridmarket_core::metering::MeteringError;

pub use config::Config;
pub use runtime::{start, NodeHandle};

#[derive(Debug, thiserror::Error)]
pub enum NodeError {
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
    #[error("key: {0}")]
    Key(String),
    #[error("config: {0}")]
    Config(String),
    #[error(transparent)]
    Ledger(#[from] LedgerError),
    #[error(transparent)]
    Metering(#[from] MeteringError),
    #[error("households: {0}")]
    Roster(String),
}

impl NodeError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        NodeError::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}
