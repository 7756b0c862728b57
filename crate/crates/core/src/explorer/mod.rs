//! Read-only queries over committed chain data.

mod kpi;

pub use kpi::{compute_kpis, interval_flows, series, IntervalFlows, KpiReport, Resolution, SeriesPoint};

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::identity::{Address, Hash, SignatureVerifier};
use crate::ledger::{AppState, Block, Genesis, LedgerError, Transaction};
use crate::market::{
    local_coverage, ArrivalSeq, ClearingResult, Party, Residual, SettlementEntry, SettlementKind, Side, Trade,
};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ExplorerError {
    #[error("NOT_FOUND: {0}")]
    NotFound(String),
    #[error("INVALID_RANGE: {0}")]
    InvalidRange(String),
    #[error("MISSING_READINGS: no readings for intervals {from}..={to}")]
    MissingReadings { from: u64, to: u64 },
    #[error("READING_MISMATCH: interval {interval_id}: {detail}")]
    ReadingMismatch { interval_id: u64, detail: String },
}

impl ExplorerError {
    pub fn code(&self) -> &'static str {
        match self {
            ExplorerError::NotFound(_) => "NOT_FOUND",
            ExplorerError::InvalidRange(_) => "INVALID_RANGE",
            ExplorerError::MissingReadings { .. } => "MISSING_READINGS",
            ExplorerError::ReadingMismatch { .. } => "READING_MISMATCH",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TxLookup {
    pub tx: Transaction,
    pub hash: Hash,
    pub height: u64,
    pub index: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum TradeRole {
    Buyer,
    Seller,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AccountTrade {
    pub role: TradeRole,
    pub trade: Trade,
    /// This account's settlement for the trade, grid fee included.
    pub amount_uct: i64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnonymousOrder {
    pub side: Side,
    pub energy_wh: u64,
    pub limit_price_mct: u64,
    pub arrival_seq: ArrivalSeq,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntervalView {
    pub interval_id: u64,
    pub start_utc: String,
    pub buys: Vec<AnonymousOrder>,
    pub sells: Vec<AnonymousOrder>,
    pub trades: Vec<Trade>,
    pub utility_sales: Vec<Residual>,
    pub utility_purchases: Vec<Residual>,
    pub settlements: Vec<SettlementEntry>,
    pub local_volume_wh: u64,
    pub local_coverage: f64,
    pub mean_local_price_mct: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AccountView {
    pub address: Address,
    pub balance_uct: i64,
    pub nonce: u64,
}

/// Committed blocks plus the state after the tip.
#[derive(Debug, Clone)]
pub struct ChainStore {
    genesis: Genesis,
    blocks: Vec<Block>,
    tx_index: HashMap<Hash, (u64, u32)>,
    state: AppState,
}

impl ChainStore {
    pub fn new(genesis: Genesis) -> Self {
        let state = AppState::from_genesis(&genesis);
        Self {
            genesis,
            blocks: Vec::new(),
            tx_index: HashMap::new(),
            state,
        }
    }

    /// Rebuild from a block log, verifying every block.
    pub fn replay(genesis: Genesis, blocks: Vec<Block>, verifier: &dyn SignatureVerifier) -> Result<Self, LedgerError> {
        let mut store = Self::new(genesis);
        for block in blocks {
            store.append(block, verifier)?;
        }
        Ok(store)
    }

    pub fn append(&mut self, block: Block, verifier: &dyn SignatureVerifier) -> Result<(), LedgerError> {
        let next = self.state.apply_block(&block, verifier)?;
        self.push_verified(block, next);
        Ok(())
    }

    /// Record a block whose resulting state the caller already computed.
    pub fn push_verified(&mut self, block: Block, state: AppState) {
        debug_assert_eq!(block.height, self.blocks.len() as u64 + 1);
        for (i, tx) in block.transactions.iter().enumerate() {
            self.tx_index.insert(tx.hash(), (block.height, i as u32));
        }
        self.blocks.push(block);
        self.state = state;
    }

    pub fn genesis(&self) -> &Genesis {
        &self.genesis
    }

    pub fn state(&self) -> &AppState {
        &self.state
    }

    pub fn blocks(&self) -> &[Block] {
        &self.blocks
    }

    pub fn tip_height(&self) -> u64 {
        self.blocks.len() as u64
    }

    pub fn get_block(&self, height: u64) -> Result<&Block, ExplorerError> {
        height
            .checked_sub(1)
            .and_then(|i| self.blocks.get(i as usize))
            .ok_or_else(|| ExplorerError::NotFound(format!("block {height}")))
    }

    pub fn get_tx(&self, hash: &Hash) -> Result<TxLookup, ExplorerError> {
        let (height, index) = *self
            .tx_index
            .get(hash)
            .ok_or_else(|| ExplorerError::NotFound(format!("transaction {hash}")))?;
        let tx = self.blocks[height as usize - 1].transactions[index as usize].clone();
        Ok(TxLookup {
            tx,
            hash: *hash,
            height,
            index,
        })
    }

    pub fn get_account(&self, address: &Address) -> Result<AccountView, ExplorerError> {
        let a = self
            .state
            .accounts
            .get(address)
            .ok_or_else(|| ExplorerError::NotFound(format!("account {address}")))?;
        Ok(AccountView {
            address: *address,
            balance_uct: a.balance_uct,
            nonce: a.nonce,
        })
    }

    /// Cleared results for `from..=to`, all of which must exist.
    pub fn cleared_range(&self, from: u64, to: u64) -> Result<&[std::sync::Arc<ClearingResult>], ExplorerError> {
        if from > to {
            return Err(ExplorerError::InvalidRange(format!("from {from} > to {to}")));
        }
        let history = &self.state.clearing_history;
        let first = history.first().map(|r| r.interval_id);
        let last = history.last().map(|r| r.interval_id);
        match (first, last) {
            (Some(f), Some(l)) if from >= f && to <= l => {
                Ok(&history[(from - f) as usize..=(to - f) as usize])
            }
            _ => Err(ExplorerError::InvalidRange(format!(
                "intervals {from}..={to} not all cleared (cleared: {})",
                match (first, last) {
                    (Some(f), Some(l)) => format!("{f}..={l}"),
                    _ => "none".into(),
                }
            ))),
        }
    }

    /// Local trades of `account` in `from..=to`, in interval order. Intervals
    /// not yet cleared contribute nothing.
    pub fn get_trades(&self, account: &Address, from: u64, to: u64) -> Result<Vec<AccountTrade>, ExplorerError> {
        if from > to {
            return Err(ExplorerError::InvalidRange(format!("from {from} > to {to}")));
        }
        let mut out = Vec::new();
        let party = Party::Account(*account);
        for result in &self.state.clearing_history {
            if result.interval_id < from || result.interval_id > to {
                continue;
            }
            for (i, trade) in result.trades.iter().enumerate() {
                let role = if &trade.buyer == account {
                    TradeRole::Buyer
                } else if &trade.seller == account {
                    TradeRole::Seller
                } else {
                    continue;
                };
                let amount_uct = result
                    .settlements
                    .iter()
                    .filter(|s| s.kind == SettlementKind::LocalTrade && s.source_index == i as u32 && s.party == party)
                    .map(|s| s.amount_uct)
                    .sum();
                out.push(AccountTrade {
                    role,
                    trade: trade.clone(),
                    amount_uct,
                });
            }
        }
        Ok(out)
    }

    pub fn kpis(
        &self,
        account: &Address,
        from: u64,
        to: u64,
        profile: &crate::metering::HouseholdProfile,
    ) -> Result<KpiReport, ExplorerError> {
        compute_kpis(account, profile, self.cleared_range(from, to)?)
    }

    pub fn series(
        &self,
        account: &Address,
        from: u64,
        to: u64,
        profile: &crate::metering::HouseholdProfile,
        resolution: Resolution,
    ) -> Result<Vec<SeriesPoint>, ExplorerError> {
        let cleared = self.cleared_range(from, to)?;
        series(account, profile, cleared, self.state.params.interval_seconds, resolution)
    }

    pub fn interval(&self, interval_id: u64) -> Result<IntervalView, ExplorerError> {
        let r = self
            .state
            .clearing(interval_id)
            .ok_or_else(|| ExplorerError::NotFound(format!("interval {interval_id}")))?;
        let anon = |o: &crate::market::Order| AnonymousOrder {
            side: o.side,
            energy_wh: o.energy_wh,
            limit_price_mct: o.limit_price_mct,
            arrival_seq: o.arrival_seq,
        };
        Ok(IntervalView {
            interval_id,
            start_utc: crate::metering::format_timestamp(interval_id * self.state.params.interval_seconds),
            buys: r.book.buys.iter().map(anon).collect(),
            sells: r.book.sells.iter().map(anon).collect(),
            trades: r.trades.clone(),
            utility_sales: r.utility_sales.clone(),
            utility_purchases: r.utility_purchases.clone(),
            settlements: r.settlements.clone(),
            local_volume_wh: r.local_volume_wh(),
            local_coverage: local_coverage(r),
            mean_local_price_mct: r.mean_local_price_mct(),
        })
    }
}
