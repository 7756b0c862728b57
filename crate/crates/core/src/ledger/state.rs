//! The replicated application state machine.

use std::collections::BTreeMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{Block, Genesis, LedgerError, Transaction, TxError};
use crate::identity::{canonical_hash, derive_address, Address, Hash, SignatureVerifier};
use crate::market::{clear_interval, ArrivalSeq, ClearingResult, Order, OrderBook, Party, TariffConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Account {
    /// May go negative; billing is post-paid.
    pub balance_uct: i64,
    /// Nonce of the last applied transaction; the next one must be this + 1.
    pub nonce: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChainParams {
    pub chain_id: String,
    pub interval_seconds: u64,
    pub tariff: TariffConfig,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AppState {
    pub params: ChainParams,
    pub height: u64,
    pub last_block_hash: Hash,
    pub last_timestamp: u64,
    pub accounts: BTreeMap<Address, Account>,
    pub utility_balance_uct: i64,
    pub grid_operator_balance_uct: i64,
    pub current_interval_id: u64,
    pub open_book: OrderBook,
    pub clearing_history: Vec<Arc<ClearingResult>>,
    /// Hash chain over `clearing_history`.
    pub history_digest: Hash,
}

/// The hashed view of the state. The clearing history enters through its
/// running digest so hashing cost does not grow with chain length. Chain
/// linkage is left to block hashes.
#[derive(Serialize)]
struct StateCommitment<'a> {
    accounts: &'a BTreeMap<Address, Account>,
    chain_id: &'a str,
    current_interval_id: u64,
    grid_operator_balance_uct: i64,
    height: u64,
    history_digest: &'a Hash,
    history_len: u64,
    interval_seconds: u64,
    last_timestamp: u64,
    open_book: &'a OrderBook,
    tariff: &'a TariffConfig,
    utility_balance_uct: i64,
}

impl AppState {
    pub fn from_genesis(genesis: &Genesis) -> Self {
        let accounts = genesis
            .accounts
            .iter()
            .map(|a| {
                (
                    a.address,
                    Account {
                        balance_uct: a.balance_uct,
                        nonce: 0,
                    },
                )
            })
            .collect();
        let current_interval_id = genesis.genesis_time / genesis.interval_seconds;
        Self {
            params: ChainParams {
                chain_id: genesis.chain_id.clone(),
                interval_seconds: genesis.interval_seconds,
                tariff: genesis.tariff,
            },
            height: 0,
            last_block_hash: genesis.hash(),
            last_timestamp: genesis.genesis_time,
            accounts,
            utility_balance_uct: 0,
            grid_operator_balance_uct: 0,
            current_interval_id,
            open_book: OrderBook::new(current_interval_id),
            clearing_history: Vec::new(),
            history_digest: Hash::ZERO,
        }
    }

    pub fn tariff(&self) -> &TariffConfig {
        &self.params.tariff
    }

    pub fn interval_of(&self, timestamp: u64) -> u64 {
        timestamp / self.params.interval_seconds
    }

    /// SHA256 of the canonical encoding of the state.
    pub fn state_hash(&self) -> Hash {
        canonical_hash(&StateCommitment {
            accounts: &self.accounts,
            chain_id: &self.params.chain_id,
            current_interval_id: self.current_interval_id,
            grid_operator_balance_uct: self.grid_operator_balance_uct,
            height: self.height,
            history_digest: &self.history_digest,
            history_len: self.clearing_history.len() as u64,
            interval_seconds: self.params.interval_seconds,
            last_timestamp: self.last_timestamp,
            open_book: &self.open_book,
            tariff: &self.params.tariff,
            utility_balance_uct: self.utility_balance_uct,
        })
        .expect("state contains only canonical kinds")
    }

    /// Sum of every balance including utility and grid operator.
    pub fn total_balance_uct(&self) -> i128 {
        self.accounts.values().map(|a| a.balance_uct as i128).sum::<i128>()
            + self.utility_balance_uct as i128
            + self.grid_operator_balance_uct as i128
    }

    pub fn nonce_of(&self, account: &Address) -> u64 {
        self.accounts.get(account).map_or(0, |a| a.nonce)
    }

    pub fn balance_of(&self, party: &Party) -> i64 {
        match party {
            Party::Account(a) => self.accounts.get(a).map_or(0, |a| a.balance_uct),
            Party::Utility => self.utility_balance_uct,
            Party::GridOperator => self.grid_operator_balance_uct,
        }
    }

    pub fn clearing(&self, interval_id: u64) -> Option<&ClearingResult> {
        let first = self.clearing_history.first()?.interval_id;
        let idx = interval_id.checked_sub(first)? as usize;
        self.clearing_history.get(idx).map(|r| r.as_ref())
    }

    fn check_signed(&self, tx: &Transaction, verifier: &dyn SignatureVerifier) -> Result<(), TxError> {
        match derive_address(&tx.sender_pubkey) {
            Ok(derived) if derived == tx.sender_address => {}
            _ => return Err(TxError::AddressMismatch),
        }
        if !verifier.verify_bytes(&tx.sender_pubkey, &tx.signing_bytes(), &tx.signature) {
            return Err(TxError::BadSignature);
        }
        Ok(())
    }

    fn check_order_fields(&self, tx: &Transaction) -> Result<(), TxError> {
        self.to_order(tx, ArrivalSeq::default())
            .validate(self.tariff())
            .map_err(|e| TxError::InvalidOrder(e.to_string()))
    }

    pub fn verify_transaction(&self, tx: &Transaction, verifier: &dyn SignatureVerifier) -> Result<(), TxError> {
        self.check_signed(tx, verifier)?;
        let expected = self.nonce_of(&tx.sender_address) + 1;
        if tx.nonce != expected {
            return Err(TxError::BadNonce {
                expected,
                got: tx.nonce,
            });
        }
        let order = tx.order();
        if order.interval_id != self.current_interval_id {
            return Err(TxError::StaleOrder {
                current: self.current_interval_id,
                got: order.interval_id,
            });
        }
        if self.open_book.contains_account(&tx.sender_address) {
            return Err(TxError::DuplicateOrder);
        }
        self.check_order_fields(tx)
    }

    /// Mempool admission: like [`verify_transaction`](Self::verify_transaction)
    /// but tolerating a sender one commit ahead of this replica. The nonce may
    /// be beyond the next expected one and the order may target the next
    /// interval.
    pub fn check_admission(&self, tx: &Transaction, verifier: &dyn SignatureVerifier) -> Result<(), TxError> {
        self.check_signed(tx, verifier)?;
        let expected = self.nonce_of(&tx.sender_address) + 1;
        if tx.nonce < expected {
            return Err(TxError::BadNonce {
                expected,
                got: tx.nonce,
            });
        }
        let got = tx.order().interval_id;
        if got != self.current_interval_id && got != self.current_interval_id + 1 {
            return Err(TxError::StaleOrder {
                current: self.current_interval_id,
                got,
            });
        }
        self.check_order_fields(tx)
    }

    fn to_order(&self, tx: &Transaction, arrival_seq: ArrivalSeq) -> Order {
        let p = tx.order();
        Order {
            account: tx.sender_address,
            side: p.side,
            energy_wh: p.energy_wh,
            limit_price_mct: p.limit_price_mct,
            interval_id: p.interval_id,
            arrival_seq,
        }
    }

    /// Verify and apply one transaction. On error the state is unchanged.
    pub fn apply_transaction(
        &mut self,
        tx: &Transaction,
        arrival_seq: ArrivalSeq,
        verifier: &dyn SignatureVerifier,
    ) -> Result<(), TxError> {
        self.verify_transaction(tx, verifier)?;
        let order = self.to_order(tx, arrival_seq);
        self.open_book.insert_order(order).map_err(TxError::from)?;
        self.accounts.entry(tx.sender_address).or_default().nonce = tx.nonce;
        Ok(())
    }

    /// Clear every interval that ends at or before `timestamp`.
    fn advance_intervals(&mut self, timestamp: u64) {
        let target = self.interval_of(timestamp);
        while self.current_interval_id < target {
            let book = std::mem::replace(&mut self.open_book, OrderBook::new(self.current_interval_id + 1));
            let result = clear_interval(&book, &self.params.tariff);
            for entry in &result.settlements {
                let slot = match entry.party {
                    Party::Account(a) => &mut self.accounts.entry(a).or_default().balance_uct,
                    Party::Utility => &mut self.utility_balance_uct,
                    Party::GridOperator => &mut self.grid_operator_balance_uct,
                };
                *slot += entry.amount_uct;
            }
            let result_hash = canonical_hash(&result).expect("clearing result is canonical");
            let mut chain = Vec::with_capacity(64);
            chain.extend_from_slice(self.history_digest.as_bytes());
            chain.extend_from_slice(result_hash.as_bytes());
            self.history_digest = Hash::digest(&chain);
            self.clearing_history.push(Arc::new(result));
            self.current_interval_id += 1;
        }
    }

    /// Execute a block body without checking its claimed state hash.
    /// Used by proposers, and by [`AppState::apply_block`].
    pub fn execute(
        &self,
        height: u64,
        timestamp: u64,
        prev_hash: &Hash,
        transactions: &[Transaction],
        verifier: &dyn SignatureVerifier,
    ) -> Result<AppState, LedgerError> {
        if height != self.height + 1 {
            return Err(LedgerError::BadHeight {
                expected: self.height + 1,
                got: height,
            });
        }
        if prev_hash != &self.last_block_hash {
            return Err(LedgerError::BadPrevHash);
        }
        if timestamp <= self.last_timestamp {
            return Err(LedgerError::NonMonotoneTimestamp {
                prev: self.last_timestamp,
                got: timestamp,
            });
        }
        let mut next = self.clone();
        for (index, tx) in transactions.iter().enumerate() {
            next.apply_transaction(tx, ArrivalSeq::new(height, index as u32), verifier)
                .map_err(|error| LedgerError::InvalidTransaction { index, error })?;
        }
        next.advance_intervals(timestamp);
        next.height = height;
        next.last_timestamp = timestamp;
        Ok(next)
    }

    /// Apply a complete block. Any invalid transaction invalidates the block.
    pub fn apply_block(&self, block: &Block, verifier: &dyn SignatureVerifier) -> Result<AppState, LedgerError> {
        let mut next = self.execute(block.height, block.timestamp, &block.prev_hash, &block.transactions, verifier)?;
        let hash = next.state_hash();
        if hash != block.app_state_hash {
            return Err(LedgerError::StateHashMismatch {
                expected: hash,
                claimed: block.app_state_hash,
            });
        }
        next.last_block_hash = block.hash();
        Ok(next)
    }

    /// Assemble a block from candidate transactions, keeping those that
    /// apply cleanly in order and dropping the rest.
    pub fn build_block(
        &self,
        timestamp: u64,
        proposer: Address,
        candidates: impl IntoIterator<Item = Transaction>,
        max_txs: usize,
        verifier: &dyn SignatureVerifier,
    ) -> Result<(Block, AppState), LedgerError> {
        let height = self.height + 1;
        if timestamp <= self.last_timestamp {
            return Err(LedgerError::NonMonotoneTimestamp {
                prev: self.last_timestamp,
                got: timestamp,
            });
        }
        let mut scratch = self.clone();
        let mut included = Vec::new();
        for tx in candidates {
            if included.len() >= max_txs {
                break;
            }
            let seq = ArrivalSeq::new(height, included.len() as u32);
            if scratch.apply_transaction(&tx, seq, verifier).is_ok() {
                included.push(tx);
            }
        }
        let prev_hash = self.last_block_hash;
        let mut next = self.execute(height, timestamp, &prev_hash, &included, verifier)?;
        let block = Block {
            height,
            timestamp,
            prev_hash,
            transactions: included,
            app_state_hash: next.state_hash(),
            proposer,
        };
        next.last_block_hash = block.hash();
        Ok((block, next))
    }
}
