use serde::{Deserialize, Serialize};

use super::ConsensusError;
use crate::identity::{derive_address, Address, PublicKey};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Validator {
    pub address: Address,
    pub pubkey: PublicKey,
}

/// Fixed at genesis. Every validator carries one unit of voting power.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ValidatorSet {
    pub validators: Vec<Validator>,
}

impl ValidatorSet {
    pub fn new(validators: Vec<Validator>) -> Result<Self, ConsensusError> {
        let set = Self { validators };
        set.check()?;
        Ok(set)
    }

    pub fn check(&self) -> Result<(), ConsensusError> {
        if self.validators.is_empty() {
            return Err(ConsensusError::EmptyValidatorSet);
        }
        let mut seen = std::collections::BTreeSet::new();
        for v in &self.validators {
            if !seen.insert(v.address) {
                return Err(ConsensusError::DuplicateValidator(v.address));
            }
            if derive_address(&v.pubkey).ok() != Some(v.address) {
                return Err(ConsensusError::ValidatorKeyMismatch(v.address));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.validators.len()
    }

    pub fn is_empty(&self) -> bool {
        self.validators.is_empty()
    }

    pub fn total_power(&self) -> u64 {
        self.validators.len() as u64
    }

    pub fn get(&self, address: &Address) -> Option<&Validator> {
        self.validators.iter().find(|v| &v.address == address)
    }

    pub fn contains(&self, address: &Address) -> bool {
        self.get(address).is_some()
    }

    /// Round-robin: `validators[(height + round) mod n]`.
    pub fn proposer_for(&self, height: u64, round: u32) -> Result<&Validator, ConsensusError> {
        if self.validators.is_empty() {
            return Err(ConsensusError::EmptyValidatorSet);
        }
        let n = self.validators.len() as u64;
        let idx = (height.wrapping_add(round as u64)) % n;
        Ok(&self.validators[idx as usize])
    }

    /// Strictly more than two thirds of total power.
    pub fn is_quorum(&self, power: u64) -> bool {
        3 * power > 2 * self.total_power()
    }

    /// Strictly more than one third: at least one honest member among them.
    pub fn is_one_third_plus(&self, power: u64) -> bool {
        3 * power > self.total_power()
    }
}

/// True iff the distinct set members among `voters` carry a quorum.
pub fn quorum_reached<'a>(voters: impl IntoIterator<Item = &'a Address>, set: &ValidatorSet) -> bool {
    let distinct: std::collections::BTreeSet<&Address> =
        voters.into_iter().filter(|a| set.contains(a)).collect();
    set.is_quorum(distinct.len() as u64)
}
