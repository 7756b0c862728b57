//! Transactions, blocks and the replicated state machine.
//!
//! Blocks apply atomically: every transaction is verified and applied in
//! order, then each 15-minute interval the block's timestamp has moved past
//! is cleared exactly once.

mod block;
mod genesis;
pub mod log;
mod state;
mod tx;

pub use block::Block;
pub use genesis::{Genesis, GenesisAccount, DEFAULT_INTERVAL_SECONDS};
pub use log::BlockLog;
pub use state::{Account, AppState, ChainParams};
pub use tx::{OrderPayload, Payload, Transaction};

use crate::identity::{Hash, SignatureVerifier};
use crate::market::MarketError;

/// Why a transaction was rejected. Each variant has a stable code.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum TxError {
    #[error("ADDRESS_MISMATCH: address does not derive from the public key")]
    AddressMismatch,
    #[error("BAD_SIGNATURE")]
    BadSignature,
    #[error("BAD_NONCE: expected {expected}, got {got}")]
    BadNonce { expected: u64, got: u64 },
    #[error("DUPLICATE_ORDER")]
    DuplicateOrder,
    #[error("STALE_ORDER: current interval {current}, order for {got}")]
    StaleOrder { current: u64, got: u64 },
    #[error("INVALID_ORDER: {0}")]
    InvalidOrder(String),
}

impl TxError {
    pub fn code(&self) -> &'static str {
        match self {
            TxError::AddressMismatch => "ADDRESS_MISMATCH",
            TxError::BadSignature => "BAD_SIGNATURE",
            TxError::BadNonce { .. } => "BAD_NONCE",
            TxError::DuplicateOrder => "DUPLICATE_ORDER",
            TxError::StaleOrder { .. } => "STALE_ORDER",
            TxError::InvalidOrder(_) => "INVALID_ORDER",
        }
    }
}

impl From<MarketError> for TxError {
    fn from(e: MarketError) -> Self {
        match e {
            MarketError::DuplicateOrder(_) => TxError::DuplicateOrder,
            MarketError::StaleOrder {
                book_interval,
                order_interval,
            } => TxError::StaleOrder {
                current: book_interval,
                got: order_interval,
            },
            other => TxError::InvalidOrder(other.to_string()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum LedgerError {
    #[error("expected height {expected}, got {got}")]
    BadHeight { expected: u64, got: u64 },
    #[error("prev_hash does not match the last block")]
    BadPrevHash,
    #[error("timestamp {got} not after previous {prev}")]
    NonMonotoneTimestamp { prev: u64, got: u64 },
    #[error("transaction {index} invalid: {error}")]
    InvalidTransaction { index: usize, error: TxError },
    #[error("app_state_hash mismatch: computed {expected}, block claims {claimed}")]
    StateHashMismatch { expected: Hash, claimed: Hash },
    #[error("genesis: {0}")]
    Genesis(String),
    #[error("block log line {line}: {reason}")]
    Log { line: usize, reason: String },
    #[error("io: {0}")]
    Io(String),
}

/// Replay a block log from genesis, returning the state after each height
/// (index 0 is genesis).
pub fn replay(
    genesis: &Genesis,
    blocks: &[Block],
    verifier: &dyn SignatureVerifier,
) -> Result<Vec<AppState>, LedgerError> {
    let mut states = Vec::with_capacity(blocks.len() + 1);
    states.push(AppState::from_genesis(genesis));
    for block in blocks {
        let next = states.last().expect("non-empty").apply_block(block, verifier)?;
        states.push(next);
    }
    Ok(states)
}
