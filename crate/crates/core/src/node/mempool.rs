use std::collections::HashSet;

use crate::identity::Hash;
use crate::ledger::{AppState, Block, Transaction};

/// Pending transactions in arrival order.
#[derive(Debug, Clone, Default)]
pub struct Mempool {
    limit: usize,
    txs: Vec<(Hash, Transaction)>,
    hashes: HashSet<Hash>,
}

impl Mempool {
    pub fn new(limit: usize) -> Self {
        Self {
            limit,
            txs: Vec::new(),
            hashes: HashSet::new(),
        }
    }

    /// False if already present or full.
    pub fn insert(&mut self, tx: Transaction) -> bool {
        if self.txs.len() >= self.limit {
            return false;
        }
        let hash = tx.hash();
        if !self.hashes.insert(hash) {
            return false;
        }
        self.txs.push((hash, tx));
        true
    }

    pub fn iter(&self) -> impl Iterator<Item = &Transaction> {
        self.txs.iter().map(|(_, tx)| tx)
    }

    pub fn len(&self) -> usize {
        self.txs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.txs.is_empty()
    }

    pub fn contains(&self, hash: &Hash) -> bool {
        self.hashes.contains(hash)
    }

    /// Drop what `block` included and whatever `state` makes unusable.
    pub fn prune(&mut self, state: &AppState, block: &Block) {
        let included: HashSet<Hash> = block.transactions.iter().map(Transaction::hash).collect();
        let hashes = &mut self.hashes;
        self.txs.retain(|(hash, tx)| {
            let keep = !included.contains(hash)
                && tx.nonce > state.nonce_of(&tx.sender_address)
                && tx.order().interval_id >= state.current_interval_id;
            if !keep {
                hashes.remove(hash);
            }
            keep
        });
    }
}
