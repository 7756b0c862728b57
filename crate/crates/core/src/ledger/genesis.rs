use std::path::Path;

use serde::{Deserialize, Serialize};

use super::LedgerError;
use crate::consensus::ValidatorSet;
use crate::identity::{canonical_hash, Address, Hash};
use crate::market::TariffConfig;

pub const DEFAULT_INTERVAL_SECONDS: u64 = 900;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GenesisAccount {
    pub address: Address,
    pub balance_uct: i64,
}

/// Everything a replica needs to start: accounts, validators, tariffs and
/// the clearing interval length.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Genesis {
    pub chain_id: String,
    /// Unix seconds.
    pub genesis_time: u64,
    pub interval_seconds: u64,
    pub tariff: TariffConfig,
    pub accounts: Vec<GenesisAccount>,
    pub validators: ValidatorSet,
}

impl Genesis {
    pub fn hash(&self) -> Hash {
        canonical_hash(self).expect("genesis contains only canonical kinds")
    }

    pub fn validate(&self) -> Result<(), LedgerError> {
        if self.interval_seconds == 0 {
            return Err(LedgerError::Genesis("interval_seconds must be positive".into()));
        }
        self.tariff.validate().map_err(|e| LedgerError::Genesis(e.to_string()))?;
        let mut seen = std::collections::BTreeSet::new();
        for a in &self.accounts {
            if !seen.insert(a.address) {
                return Err(LedgerError::Genesis(format!("duplicate account {}", a.address)));
            }
        }
        self.validators.check().map_err(|e| LedgerError::Genesis(e.to_string()))?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, LedgerError> {
        let text = std::fs::read_to_string(path).map_err(|e| LedgerError::Io(format!("{}: {e}", path.display())))?;
        let genesis: Genesis =
            serde_json::from_str(&text).map_err(|e| LedgerError::Genesis(format!("{}: {e}", path.display())))?;
        genesis.validate()?;
        Ok(genesis)
    }

    pub fn save(&self, path: &Path) -> Result<(), LedgerError> {
        let text = serde_json::to_string_pretty(self).expect("genesis serializes");
        std::fs::write(path, text + "\n").map_err(|e| LedgerError::Io(format!("{}: {e}", path.display())))
    }
}
