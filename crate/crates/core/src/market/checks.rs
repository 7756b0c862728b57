//! Runtime invariant checks over a clearing result.
//!
//! Used by the simulator on every interval. None of these re-run the
//! clearing algorithm; they only inspect its output against the book.

use std::collections::BTreeMap;

use super::{price_trade, ClearingResult, Party, TariffConfig};
use crate::identity::Address;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub invariant: &'static str,
    pub detail: String,
}

impl Violation {
    fn new(invariant: &'static str, detail: impl Into<String>) -> Self {
        Self {
            invariant,
            detail: detail.into(),
        }
    }
}

pub const INDIVIDUAL_RATIONALITY: &str = "individual_rationality";
pub const BUDGET_BALANCE: &str = "budget_balance";
pub const ENERGY_CONSERVATION: &str = "energy_conservation";
pub const NO_RESIDUAL_CROSSING: &str = "no_residual_crossing";
pub const PRICE_SANITY: &str = "price_sanity";

pub const ALL: [&str; 5] = [
    INDIVIDUAL_RATIONALITY,
    BUDGET_BALANCE,
    ENERGY_CONSERVATION,
    NO_RESIDUAL_CROSSING,
    PRICE_SANITY,
];

/// Check every market invariant; returns all violations found.
pub fn check_clearing(result: &ClearingResult, tariff: &TariffConfig) -> Vec<Violation> {
    let mut out = Vec::new();
    let book = &result.book;
    let limit_of = |account: &Address| book.orders().find(|o| &o.account == account).map(|o| o.limit_price_mct);

    for (i, t) in result.trades.iter().enumerate() {
        let (Some(buy), Some(sell)) = (limit_of(&t.buyer), limit_of(&t.seller)) else {
            out.push(Violation::new(INDIVIDUAL_RATIONALITY, format!("trade {i}: party without an order")));
            continue;
        };
        if !(sell <= t.price_mct && t.price_mct <= buy) || t.energy_wh == 0 {
            out.push(Violation::new(
                INDIVIDUAL_RATIONALITY,
                format!("trade {i}: price {} outside [{sell}, {buy}]", t.price_mct),
            ));
        }
        if price_trade(buy, sell).ok() != Some(t.price_mct) {
            out.push(Violation::new(INDIVIDUAL_RATIONALITY, format!("trade {i}: price is not floor of mean")));
        }
        if t.price_mct < tariff.feed_in_mct || t.price_mct > tariff.retail_energy_mct {
            out.push(Violation::new(PRICE_SANITY, format!("trade {i}: price {} outside tariff band", t.price_mct)));
        }
        if t.price_mct + tariff.grid_fee_local_mct > tariff.retail_energy_mct + tariff.grid_fee_full_mct {
            out.push(Violation::new(PRICE_SANITY, format!("trade {i}: buyer all-in cost above utility")));
        }
    }

    let sum = result.settlement_sum_uct();
    if sum != 0 {
        out.push(Violation::new(BUDGET_BALANCE, format!("settlements sum to {sum}")));
    }

    // Per order: traded + residual == submitted.
    let mut traded: BTreeMap<Address, u64> = BTreeMap::new();
    for t in &result.trades {
        *traded.entry(t.buyer).or_default() += t.energy_wh;
        *traded.entry(t.seller).or_default() += t.energy_wh;
    }
    for r in result.utility_sales.iter().chain(&result.utility_purchases) {
        *traded.entry(r.account).or_default() += r.energy_wh;
    }
    for o in book.orders() {
        let got = traded.remove(&o.account).unwrap_or(0);
        if got != o.energy_wh {
            out.push(Violation::new(
                ENERGY_CONSERVATION,
                format!("account {}: submitted {} Wh, accounted {got} Wh", o.account, o.energy_wh),
            ));
        }
    }
    for (account, wh) in traded {
        out.push(Violation::new(ENERGY_CONSERVATION, format!("account {account}: {wh} Wh without an order")));
    }

    // A best residual bid that still crosses the best residual ask means
    // volume was left on the table.
    let best_left = |residuals: &[super::Residual], pick_max: bool| {
        let limits = residuals.iter().filter_map(|r| limit_of(&r.account));
        if pick_max {
            limits.max()
        } else {
            limits.min()
        }
    };
    if let (Some(bid), Some(ask)) = (best_left(&result.utility_sales, true), best_left(&result.utility_purchases, false)) {
        if bid >= ask {
            out.push(Violation::new(
                NO_RESIDUAL_CROSSING,
                format!("residual bid {bid} crosses residual ask {ask}"),
            ));
        }
    }

    // Seller revenue per Wh is at least the feed-in tariff.
    for e in &result.settlements {
        if let (Party::Account(_), super::SettlementKind::LocalTrade) = (e.party, e.kind) {
            if e.amount_uct > 0 {
                let t = &result.trades[e.source_index as usize];
                if (e.amount_uct as i128) < tariff.feed_in_mct as i128 * t.energy_wh as i128 {
                    out.push(Violation::new(PRICE_SANITY, "seller revenue below feed-in"));
                }
            }
        }
    }
    out
}
