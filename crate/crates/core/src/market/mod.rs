//! The deterministic market every replica runs: order book, clearing and
//! settlement. All quantities are integers; no floats reach replicated state.

pub mod book;
pub mod checks;
pub mod clearing;
pub mod settlement;
mod tariff;

pub use book::{ArrivalSeq, Order, OrderBook, Side, MAX_ORDER_WH};
pub use clearing::{clear_interval, local_coverage, price_trade, ClearingResult, Residual, Trade};
pub use settlement::{settle, Party, SettlementEntry, SettlementKind};
pub use tariff::TariffConfig;

use crate::identity::Address;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum MarketError {
    #[error("DUPLICATE_ORDER: account {0} already has an order in this interval")]
    DuplicateOrder(Address),
    #[error("STALE_ORDER: order targets interval {order_interval}, book is {book_interval}")]
    StaleOrder { book_interval: u64, order_interval: u64 },
    #[error("INVALID_ORDER: {0}")]
    InvalidOrder(String),
    #[error("crossed prices: buy limit {buy_limit_mct} below sell limit {sell_limit_mct}")]
    CrossedPrices { buy_limit_mct: u64, sell_limit_mct: u64 },
    #[error("invalid tariff: {0}")]
    InvalidTariff(&'static str),
}
