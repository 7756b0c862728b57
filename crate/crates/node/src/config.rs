//! Node configuration file (TOML). Relative paths resolve against the
//! directory holding the file. `node.example.toml` at the repository root
//! lists every key with its default.

use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use gridmarket_core::consensus::ConsensusConfig;
use gridmarket_core::ledger::Genesis;
use gridmarket_core::market::TariffConfig;
use gridmarket_core::metering::HouseholdKind;
use gridmarket_core::node::{NodeConfig, TimestampPolicy};
use serde::Deserialize;

use crate::NodeError;

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    pub node: NodeSection,
    #[serde(default)]
    pub consensus: ConsensusSection,
    #[serde(default)]
    pub chain: ChainSection,
    #[serde(default)]
    pub agent: Option<AgentSection>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NodeSection {
    /// Holds `chain.log`; created if missing.
    pub data_dir: PathBuf,
    pub genesis: PathBuf,
    /// Without a key the node can only follow the chain.
    #[serde(default)]
    pub key: Option<PathBuf>,
    #[serde(default = "default_listen")]
    pub listen: SocketAddr,
    #[serde(default = "default_http")]
    pub http: SocketAddr,
    #[serde(default)]
    pub peers: Vec<String>,
    /// Take part in consensus. Requires `key` to be in the genesis set.
    #[serde(default)]
    pub validator: bool,
    /// Household roster and meter data for the KPI endpoints.
    #[serde(default)]
    pub households: Option<PathBuf>,
    #[serde(default)]
    pub profiles: Option<PathBuf>,
}

fn default_listen() -> SocketAddr {
    "127.0.0.1:26656".parse().unwrap()
}

fn default_http() -> SocketAddr {
    "127.0.0.1:8080".parse().unwrap()
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ConsensusSection {
    pub timeout_propose_ms: u64,
    pub timeout_prevote_ms: u64,
    pub timeout_precommit_ms: u64,
    pub timeout_delta_ms: u64,
    pub block_interval_ms: u64,
    /// How far past local time a proposed block timestamp may be.
    pub max_drift_seconds: u64,
    pub max_block_txs: usize,
    pub mempool_limit: usize,
}

impl Default for ConsensusSection {
    fn default() -> Self {
        let c = ConsensusConfig::default();
        let n = NodeConfig::default();
        Self {
            timeout_propose_ms: c.timeout_propose_ms,
            timeout_prevote_ms: c.timeout_prevote_ms,
            timeout_precommit_ms: c.timeout_precommit_ms,
            timeout_delta_ms: c.timeout_delta_ms,
            block_interval_ms: c.block_interval_ms,
            max_drift_seconds: 30,
            max_block_txs: n.max_block_txs,
            mempool_limit: n.mempool_limit,
        }
    }
}

/// Chain parameters live in genesis. Values set here are expectations: the
/// node refuses to start if genesis disagrees.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChainSection {
    pub chain_id: Option<String>,
    pub interval_seconds: Option<u64>,
    pub tariff: Option<TariffConfig>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgentSection {
    /// Household id in the profiles file.
    pub household: String,
    pub kind: HouseholdKind,
    /// Meter readings; defaults to `node.profiles`.
    #[serde(default)]
    pub profiles: Option<PathBuf>,
    /// Signing key of the household; defaults to `node.key`.
    #[serde(default)]
    pub key: Option<PathBuf>,
}

impl Config {
    pub fn load(path: &Path) -> Result<Self, NodeError> {
        let text = std::fs::read_to_string(path).map_err(|e| NodeError::io(path, e))?;
        let mut c = Self::parse(&text).map_err(|m| NodeError::Config(format!("{}: {m}", path.display())))?;
        c.resolve(path.parent().unwrap_or(Path::new(".")));
        Ok(c)
    }

    pub fn parse(text: &str) -> Result<Self, String> {
        toml::from_str(text).map_err(|e| e.to_string())
    }

    fn resolve(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.node.data_dir);
        fix(&mut self.node.genesis);
        for p in [&mut self.node.key, &mut self.node.households, &mut self.node.profiles].into_iter().flatten() {
            fix(p);
        }
        if let Some(a) = &mut self.agent {
            for p in [&mut a.profiles, &mut a.key].into_iter().flatten() {
                fix(p);
            }
        }
    }

    pub fn node_config(&self) -> NodeConfig {
        let c = &self.consensus;
        NodeConfig {
            consensus: ConsensusConfig {
                timeout_propose_ms: c.timeout_propose_ms,
                timeout_prevote_ms: c.timeout_prevote_ms,
                timeout_precommit_ms: c.timeout_precommit_ms,
                timeout_delta_ms: c.timeout_delta_ms,
                block_interval_ms: c.block_interval_ms,
            },
            timestamps: TimestampPolicy::WallClock {
                max_drift_seconds: c.max_drift_seconds,
            },
            max_block_txs: c.max_block_txs,
            mempool_limit: c.mempool_limit,
            relay_txs: true,
        }
    }

    /// Compare the `[chain]` expectations with genesis.
    pub fn check_genesis(&self, g: &Genesis) -> Result<(), NodeError> {
        let ch = &self.chain;
        let mismatch = |field: &str, want: String, got: String| {
            Err(NodeError::Config(format!("chain.{field}: config says {want}, genesis has {got}")))
        };
        if let Some(id) = &ch.chain_id {
            if id != &g.chain_id {
                return mismatch("chain_id", id.clone(), g.chain_id.clone());
            }
        }
        if let Some(s) = ch.interval_seconds {
            if s != g.interval_seconds {
                return mismatch("interval_seconds", s.to_string(), g.interval_seconds.to_string());
            }
        }
        if let Some(t) = ch.tariff {
            if t != g.tariff {
                return mismatch("tariff", format!("{t:?}"), format!("{:?}", g.tariff));
            }
        }
        Ok(())
    }
}
