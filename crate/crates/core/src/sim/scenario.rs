use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::consensus::{ConsensusConfig, Validator, ValidatorSet};
use crate::identity::KeyPair;
use crate::ledger::{Genesis, GenesisAccount, DEFAULT_INTERVAL_SECONDS};
use crate::market::TariffConfig;
use crate::metering::synthetic::HouseholdSpec;
use crate::metering::{parse_timestamp, HouseholdKind};

pub const UTILITY_NODE: &str = "utility";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HouseholdConfig {
    pub id: String,
    pub kind: HouseholdKind,
    #[serde(default)]
    pub pv_kwp: f64,
    #[serde(default)]
    pub battery_kwh: f64,
    #[serde(default = "one")]
    pub load_scale: f64,
    /// Label hashed into the private key; defaults to `household:{id}`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub key_seed: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_buy_mct: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub min_sell_mct: Option<u64>,
}

fn one() -> f64 {
    1.0
}

impl HouseholdConfig {
    pub fn keypair(&self) -> KeyPair {
        match &self.key_seed {
            Some(seed) => KeyPair::from_label(seed),
            None => KeyPair::from_label(&format!("household:{}", self.id)),
        }
    }

    pub fn spec(&self) -> HouseholdSpec {
        HouseholdSpec {
            household_id: self.id.clone(),
            kind: self.kind,
            pv_kwp: self.pv_kwp,
            battery_kwh: self.battery_kwh,
            load_scale: self.load_scale,
        }
    }
}

/// Nodes are split into groups that cannot reach each other while active.
/// Nodes not listed form one more group.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Partition {
    pub from_ms: u64,
    pub to_ms: u64,
    pub groups: Vec<Vec<String>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkConfig {
    #[serde(default = "default_min_delay")]
    pub min_delay_ms: u64,
    #[serde(default = "default_max_delay")]
    pub max_delay_ms: u64,
    #[serde(default)]
    pub drop_probability: f64,
    #[serde(default)]
    pub partitions: Vec<Partition>,
}

fn default_min_delay() -> u64 {
    5
}
fn default_max_delay() -> u64 {
    50
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self {
            min_delay_ms: default_min_delay(),
            max_delay_ms: default_max_delay(),
            drop_probability: 0.0,
            partitions: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FaultConfig {
    /// Validator nodes that never start.
    #[serde(default)]
    pub crashed: Vec<String>,
    /// Validator nodes that send conflicting proposals and votes.
    #[serde(default)]
    pub equivocators: Vec<String>,
}

fn default_interval_seconds() -> u64 {
    DEFAULT_INTERVAL_SECONDS
}
fn default_block_seconds() -> u64 {
    300
}
fn default_true() -> bool {
    true
}
fn default_sim_consensus() -> ConsensusConfig {
    ConsensusConfig {
        block_interval_ms: 1000,
        ..ConsensusConfig::default()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    pub chain_id: String,
    pub genesis_time_utc: String,
    #[serde(default = "default_interval_seconds")]
    pub interval_seconds: u64,
    /// Logical seconds between consecutive blocks.
    #[serde(default = "default_block_seconds")]
    pub block_seconds: u64,
    #[serde(default)]
    pub tariff: TariffConfig,
    /// Whether the utility runs a validator next to the prosumers.
    #[serde(default = "default_true")]
    pub utility_validator: bool,
    pub households: Vec<HouseholdConfig>,
    #[serde(default)]
    pub network: NetworkConfig,
    #[serde(default)]
    pub faults: FaultConfig,
    #[serde(default = "default_sim_consensus")]
    pub consensus: ConsensusConfig,
    /// Profile CSV, relative to the scenario file. Synthetic profiles are
    /// generated when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub profiles_csv: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("{location}: {message}")]
pub struct ScenarioError {
    pub location: String,
    pub message: String,
}

fn err(location: impl Into<String>, message: impl Into<String>) -> ScenarioError {
    ScenarioError {
        location: location.into(),
        message: message.into(),
    }
}

impl Scenario {
    pub fn from_json(text: &str) -> Result<Self, ScenarioError> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let s: Scenario = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            let inner = e.into_inner();
            err(
                if path == "." {
                    format!("line {} column {}", inner.line(), inner.column())
                } else {
                    format!("{path} (line {} column {})", inner.line(), inner.column())
                },
                inner.to_string(),
            )
        })?;
        s.validate()?;
        Ok(s)
    }

    /// Load and validate; a relative `profiles_csv` is resolved against the
    /// scenario's directory.
    pub fn load(path: &Path) -> Result<Self, ScenarioError> {
        let text = std::fs::read_to_string(path).map_err(|e| err(path.display().to_string(), e.to_string()))?;
        let mut s = Self::from_json(&text).map_err(|e| err(format!("{}: {}", path.display(), e.location), e.message))?;
        if let (Some(csv), Some(dir)) = (&s.profiles_csv, path.parent()) {
            if csv.is_relative() {
                s.profiles_csv = Some(dir.join(csv));
            }
        }
        Ok(s)
    }

    pub fn genesis_time(&self) -> u64 {
        parse_timestamp(&self.genesis_time_utc).expect("validated")
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        let ts = parse_timestamp(&self.genesis_time_utc).map_err(|m| err("genesis_time_utc", m))?;
        if self.interval_seconds == 0 {
            return Err(err("interval_seconds", "must be positive"));
        }
        if ts % self.interval_seconds != 0 {
            return Err(err("genesis_time_utc", "must be aligned to an interval start"));
        }
        if self.block_seconds == 0 || self.block_seconds > self.interval_seconds {
            return Err(err("block_seconds", "must be in 1..=interval_seconds"));
        }
        self.tariff.validate().map_err(|e| err("tariff", e.to_string()))?;
        if self.households.is_empty() {
            return Err(err("households", "at least one household is required"));
        }
        let mut ids = BTreeSet::new();
        for (i, h) in self.households.iter().enumerate() {
            let at = |field: &str| format!("households[{i}].{field}");
            if h.id.is_empty() || h.id == UTILITY_NODE {
                return Err(err(at("id"), format!("{:?} is not a usable household id", h.id)));
            }
            if !ids.insert(h.id.as_str()) {
                return Err(err(at("id"), format!("duplicate id {:?}", h.id)));
            }
            for (name, v) in [("pv_kwp", h.pv_kwp), ("battery_kwh", h.battery_kwh), ("load_scale", h.load_scale)] {
                if !v.is_finite() || v < 0.0 {
                    return Err(err(at(name), "must be a non-negative number"));
                }
            }
            if h.kind == HouseholdKind::Consumer {
                if h.pv_kwp != 0.0 || h.battery_kwh != 0.0 {
                    return Err(err(at("kind"), "consumers have no PV or battery"));
                }
                if h.min_sell_mct.is_some() {
                    return Err(err(at("min_sell_mct"), "consumers cannot set a sell limit"));
                }
            }
        }
        let n = &self.network;
        if n.min_delay_ms > n.max_delay_ms {
            return Err(err("network.min_delay_ms", "exceeds max_delay_ms"));
        }
        if !(0.0..1.0).contains(&n.drop_probability) {
            return Err(err("network.drop_probability", "must be in [0, 1)"));
        }
        let nodes = self.node_names();
        for (i, p) in n.partitions.iter().enumerate() {
            if p.from_ms > p.to_ms {
                return Err(err(format!("network.partitions[{i}]"), "from_ms exceeds to_ms"));
            }
            for (g, group) in p.groups.iter().enumerate() {
                for (j, name) in group.iter().enumerate() {
                    if !nodes.contains(name) {
                        return Err(err(
                            format!("network.partitions[{i}].groups[{g}][{j}]"),
                            format!("unknown node {name:?}"),
                        ));
                    }
                }
            }
        }
        let validators = self.validator_names();
        if validators.is_empty() {
            return Err(err("households", "no validators: add a prosumer or enable utility_validator"));
        }
        for (list, names) in [("crashed", &self.faults.crashed), ("equivocators", &self.faults.equivocators)] {
            for (i, name) in names.iter().enumerate() {
                if !validators.contains(name) {
                    return Err(err(format!("faults.{list}[{i}]"), format!("{name:?} is not a validator node")));
                }
            }
        }
        Ok(())
    }

    /// Household nodes in file order, then the utility node if enabled.
    pub fn node_names(&self) -> Vec<String> {
        let mut v: Vec<String> = self.households.iter().map(|h| h.id.clone()).collect();
        if self.utility_validator {
            v.push(UTILITY_NODE.into());
        }
        v
    }

    /// Prosumers validate, in file order, followed by the utility.
    pub fn validator_names(&self) -> Vec<String> {
        let mut v: Vec<String> = self
            .households
            .iter()
            .filter(|h| h.kind == HouseholdKind::Prosumer)
            .map(|h| h.id.clone())
            .collect();
        if self.utility_validator {
            v.push(UTILITY_NODE.into());
        }
        v
    }

    pub fn utility_key() -> KeyPair {
        KeyPair::from_label("utility")
    }

    pub fn node_key(&self, name: &str) -> KeyPair {
        if name == UTILITY_NODE {
            return Self::utility_key();
        }
        self.households.iter().find(|h| h.id == name).expect("known node").keypair()
    }

    pub fn genesis(&self) -> Genesis {
        let validators = self
            .validator_names()
            .iter()
            .map(|n| {
                let k = self.node_key(n);
                Validator {
                    address: k.address(),
                    pubkey: k.public_key(),
                }
            })
            .collect();
        Genesis {
            chain_id: self.chain_id.clone(),
            genesis_time: self.genesis_time(),
            interval_seconds: self.interval_seconds,
            tariff: self.tariff,
            accounts: self
                .households
                .iter()
                .map(|h| GenesisAccount {
                    address: h.keypair().address(),
                    balance_uct: 0,
                })
                .collect(),
            validators: ValidatorSet::new(validators).expect("scenario validators are distinct"),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"{
        "name": "t", "chain_id": "t", "genesis_time_utc": "2019-06-01T10:00:00Z",
        "households": [
            {"id": "a", "kind": "PROSUMER", "pv_kwp": 5.0},
            {"id": "b", "kind": "CONSUMER"}
        ]
    }"#;

    #[test]
    fn minimal_scenario_defaults() {
        let s = Scenario::from_json(MINIMAL).unwrap();
        assert_eq!(s.validator_names(), ["a", "utility"]);
        assert_eq!(s.node_names(), ["a", "b", "utility"]);
        assert_eq!(s.block_seconds, 300);
        assert_eq!(s.consensus.timeout_propose_ms, 1000);
        let g = s.genesis();
        assert_eq!(g.accounts.len(), 2);
        assert_eq!(g.validators.len(), 2);
        assert!(g.validate().is_ok());
    }

    #[test]
    fn errors_carry_locations() {
        let bad_kind = MINIMAL.replace(r#""kind": "CONSUMER""#, r#""kind": "CONSUMER", "pv_kwp": 1.0"#);
        assert_eq!(Scenario::from_json(&bad_kind).unwrap_err().location, "households[1].kind");

        let typo = MINIMAL.replace(r#""kind": "CONSUMER""#, r#""kind": "CONSUMR""#);
        let e = Scenario::from_json(&typo).unwrap_err();
        assert!(e.location.starts_with("households[1].kind"), "{e}");

        let dup = MINIMAL.replace(r#""id": "b""#, r#""id": "a""#);
        assert_eq!(Scenario::from_json(&dup).unwrap_err().location, "households[1].id");

        let crash = MINIMAL.replace(r#""households""#, r#""faults": {"crashed": ["b"]}, "households""#);
        assert_eq!(Scenario::from_json(&crash).unwrap_err().location, "faults.crashed[0]");

        let time = MINIMAL.replace("10:00:00Z", "10:05:00Z");
        assert_eq!(Scenario::from_json(&time).unwrap_err().location, "genesis_time_utc");
    }
}
