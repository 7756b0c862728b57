use serde::{Deserialize, Serialize};

use super::Transaction;
use crate::identity::{canonical_hash, Address, Hash};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Block {
    pub height: u64,
    /// Unix seconds.
    pub timestamp: u64,
    pub prev_hash: Hash,
    pub transactions: Vec<Transaction>,
    /// State hash after applying this block.
    pub app_state_hash: Hash,
    pub proposer: Address,
}

impl Block {
    pub fn hash(&self) -> Hash {
        canonical_hash(self).expect("block contains only canonical kinds")
    }
}
