use std::cmp::{Ordering, Reverse};

use serde::{Deserialize, Serialize};

use super::{MarketError, TariffConfig};
use crate::identity::Address;

/// Orders larger than this are rejected outright (1 GWh per interval).
pub const MAX_ORDER_WH: u64 = 1_000_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Side {
    Buy,
    Sell,
}

impl std::fmt::Display for Side {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Side::Buy => "BUY",
            Side::Sell => "SELL",
        })
    }
}

impl std::str::FromStr for Side {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_uppercase().as_str() {
            "BUY" => Ok(Side::Buy),
            "SELL" => Ok(Side::Sell),
            other => Err(format!("unknown side {other:?}")),
        }
    }
}

/// Position of the carrying transaction in the chain: (block height, tx index).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default, Serialize, Deserialize)]
pub struct ArrivalSeq {
    pub height: u64,
    pub index: u32,
}

impl ArrivalSeq {
    pub const fn new(height: u64, index: u32) -> Self {
        Self { height, index }
    }
}

/// One household's bid for one clearing interval.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Order {
    pub account: Address,
    pub side: Side,
    pub energy_wh: u64,
    /// Energy-only limit in milli-cents per kWh; grid fees are added at settlement.
    pub limit_price_mct: u64,
    pub interval_id: u64,
    pub arrival_seq: ArrivalSeq,
}

impl Order {
    /// Check the order against the tariff band and the size limits.
    pub fn validate(&self, tariff: &TariffConfig) -> Result<(), MarketError> {
        if self.energy_wh == 0 {
            return Err(MarketError::InvalidOrder("energy_wh must be positive".into()));
        }
        if self.energy_wh > MAX_ORDER_WH {
            return Err(MarketError::InvalidOrder(format!(
                "energy_wh {} exceeds {MAX_ORDER_WH}",
                self.energy_wh
            )));
        }
        if self.limit_price_mct < tariff.floor() || self.limit_price_mct > tariff.ceiling() {
            return Err(MarketError::InvalidOrder(format!(
                "limit {} outside tariff band [{}, {}]",
                self.limit_price_mct,
                tariff.floor(),
                tariff.ceiling()
            )));
        }
        Ok(())
    }
}

fn sell_key(o: &Order) -> (u64, ArrivalSeq, Address) {
    (o.limit_price_mct, o.arrival_seq, o.account)
}

fn buy_key(o: &Order) -> (Reverse<u64>, ArrivalSeq, Address) {
    (Reverse(o.limit_price_mct), o.arrival_seq, o.account)
}

/// Price-priority order: cheapest asks first, highest bids first; ties go to
/// the earlier arrival, then the smaller address.
pub fn priority(a: &Order, b: &Order) -> Ordering {
    debug_assert_eq!(a.side, b.side);
    match a.side {
        Side::Sell => sell_key(a).cmp(&sell_key(b)),
        Side::Buy => buy_key(a).cmp(&buy_key(b)),
    }
}

/// All orders collected for one interval, each side kept in priority order.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct OrderBook {
    pub interval_id: u64,
    pub buys: Vec<Order>,
    pub sells: Vec<Order>,
}

impl OrderBook {
    pub fn new(interval_id: u64) -> Self {
        Self {
            interval_id,
            buys: Vec::new(),
            sells: Vec::new(),
        }
    }

    /// Build a book from unsorted orders, applying the same checks as
    /// [`OrderBook::insert_order`].
    pub fn from_orders(interval_id: u64, orders: impl IntoIterator<Item = Order>) -> Result<Self, MarketError> {
        let mut book = Self::new(interval_id);
        for order in orders {
            book.insert_order(order)?;
        }
        Ok(book)
    }

    pub fn contains_account(&self, account: &Address) -> bool {
        self.orders().any(|o| &o.account == account)
    }

    pub fn insert_order(&mut self, order: Order) -> Result<(), MarketError> {
        if order.interval_id != self.interval_id {
            return Err(MarketError::StaleOrder {
                book_interval: self.interval_id,
                order_interval: order.interval_id,
            });
        }
        if self.contains_account(&order.account) {
            return Err(MarketError::DuplicateOrder(order.account));
        }
        let side = match order.side {
            Side::Buy => &mut self.buys,
            Side::Sell => &mut self.sells,
        };
        let pos = side.partition_point(|o| priority(o, &order) == Ordering::Less);
        side.insert(pos, order);
        Ok(())
    }

    /// Remove an account's order, if any.
    pub fn remove_account(&mut self, account: &Address) -> Option<Order> {
        for side in [&mut self.buys, &mut self.sells] {
            if let Some(pos) = side.iter().position(|o| &o.account == account) {
                return Some(side.remove(pos));
            }
        }
        None
    }

    pub fn orders(&self) -> impl Iterator<Item = &Order> {
        self.buys.iter().chain(self.sells.iter())
    }

    pub fn len(&self) -> usize {
        self.buys.len() + self.sells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn demand_wh(&self) -> u64 {
        self.buys.iter().map(|o| o.energy_wh).sum()
    }

    pub fn supply_wh(&self) -> u64 {
        self.sells.iter().map(|o| o.energy_wh).sum()
    }

    pub fn is_sorted(&self) -> bool {
        self.buys.windows(2).all(|w| priority(&w[0], &w[1]) != Ordering::Greater)
            && self.sells.windows(2).all(|w| priority(&w[0], &w[1]) != Ordering::Greater)
            && self.buys.iter().all(|o| o.side == Side::Buy)
            && self.sells.iter().all(|o| o.side == Side::Sell)
    }
}
