//! Double auction with discriminative pricing.
//!
//! Asks are walked cheapest first and bids highest first. While the best
//! remaining bid limit is at least the best remaining ask limit, the pair
//! trades `min(remaining)` Wh at the floor of the mean of the two limits.
//! Everything left on either side goes to the utility at its tariffs.

use serde::{Deserialize, Serialize};

use super::book::{Order, OrderBook};
use super::settlement::{settle, SettlementEntry};
use super::{MarketError, TariffConfig};
use crate::identity::Address;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Trade {
    pub buyer: Address,
    pub seller: Address,
    pub energy_wh: u64,
    pub price_mct: u64,
    pub interval_id: u64,
}

/// Energy assigned to the utility for one account.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Residual {
    pub account: Address,
    pub energy_wh: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClearingResult {
    pub interval_id: u64,
    /// The book as it stood when the interval closed.
    pub book: OrderBook,
    pub trades: Vec<Trade>,
    /// Buy energy the utility supplied.
    pub utility_sales: Vec<Residual>,
    /// Sell energy the utility took at the feed-in tariff.
    pub utility_purchases: Vec<Residual>,
    pub settlements: Vec<SettlementEntry>,
}

impl ClearingResult {
    pub fn empty(interval_id: u64) -> Self {
        Self {
            interval_id,
            book: OrderBook::new(interval_id),
            trades: Vec::new(),
            utility_sales: Vec::new(),
            utility_purchases: Vec::new(),
            settlements: Vec::new(),
        }
    }

    pub fn local_volume_wh(&self) -> u64 {
        self.trades.iter().map(|t| t.energy_wh).sum()
    }

    /// Volume-weighted mean local price, if anything traded.
    pub fn mean_local_price_mct(&self) -> Option<f64> {
        let volume = self.local_volume_wh();
        if volume == 0 {
            return None;
        }
        let weighted: u128 = self
            .trades
            .iter()
            .map(|t| t.price_mct as u128 * t.energy_wh as u128)
            .sum();
        Some(weighted as f64 / volume as f64)
    }

    pub fn settlement_sum_uct(&self) -> i128 {
        self.settlements.iter().map(|s| s.amount_uct as i128).sum()
    }
}

/// Discriminative trade price: the floor of the mean of the two limits.
pub fn price_trade(buy_limit_mct: u64, sell_limit_mct: u64) -> Result<u64, MarketError> {
    if buy_limit_mct < sell_limit_mct {
        return Err(MarketError::CrossedPrices {
            buy_limit_mct,
            sell_limit_mct,
        });
    }
    Ok(sell_limit_mct + (buy_limit_mct - sell_limit_mct) / 2)
}

/// Clear one interval's book.
pub fn clear_interval(book: &OrderBook, tariff: &TariffConfig) -> ClearingResult {
    debug_assert!(book.is_sorted(), "book must be in priority order");
    let buys: &[Order] = &book.buys;
    let sells: &[Order] = &book.sells;
    let mut buy_left: Vec<u64> = buys.iter().map(|o| o.energy_wh).collect();
    let mut sell_left: Vec<u64> = sells.iter().map(|o| o.energy_wh).collect();

    let mut trades = Vec::new();
    let (mut i, mut j) = (0usize, 0usize);
    while i < buys.len() && j < sells.len() && buys[i].limit_price_mct >= sells[j].limit_price_mct {
        let qty = buy_left[i].min(sell_left[j]);
        let price = price_trade(buys[i].limit_price_mct, sells[j].limit_price_mct)
            .expect("loop condition guarantees crossing limits");
        trades.push(Trade {
            buyer: buys[i].account,
            seller: sells[j].account,
            energy_wh: qty,
            price_mct: price,
            interval_id: book.interval_id,
        });
        buy_left[i] -= qty;
        sell_left[j] -= qty;
        if buy_left[i] == 0 {
            i += 1;
        }
        if sell_left[j] == 0 {
            j += 1;
        }
    }

    let residuals = |orders: &[Order], left: &[u64]| -> Vec<Residual> {
        orders
            .iter()
            .zip(left)
            .filter(|(_, &l)| l > 0)
            .map(|(o, &l)| Residual {
                account: o.account,
                energy_wh: l,
            })
            .collect()
    };
    let utility_sales = residuals(buys, &buy_left);
    let utility_purchases = residuals(sells, &sell_left);
    let settlements = settle(&trades, &utility_sales, &utility_purchases, tariff);

    ClearingResult {
        interval_id: book.interval_id,
        book: book.clone(),
        trades,
        utility_sales,
        utility_purchases,
        settlements,
    }
}

/// Share of this interval's demand served by local trades; 0 without demand.
pub fn local_coverage(result: &ClearingResult) -> f64 {
    let demand = result.book.demand_wh();
    if demand == 0 {
        return 0.0;
    }
    result.local_volume_wh() as f64 / demand as f64
}
