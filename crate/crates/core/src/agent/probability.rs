use serde::{Deserialize, Serialize};

use crate::identity::Address;
use crate::market::{clear_interval, ArrivalSeq, ClearingResult, Order, Side, TariffConfig};

/// One day of 15-minute intervals.
pub const HISTORY_INTERVALS: usize = 96;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "SCREAMING_SNAKE_CASE")]
pub enum MatchEstimate {
    /// No cleared intervals yet.
    Unknown,
    Known { matched: u32, intervals: u32 },
}

impl MatchEstimate {
    pub fn probability(&self) -> Option<f64> {
        match *self {
            MatchEstimate::Unknown => None,
            MatchEstimate::Known { matched, intervals } => Some(matched as f64 / intervals as f64),
        }
    }
}

/// Fraction of the most recent [`HISTORY_INTERVALS`] cleared intervals in
/// which a 1 Wh order at `limit_mct` would have traded at least partially.
/// The probe replaces the account's own order and arrives last, so it loses
/// every price tie.
pub fn estimate_match_probability<'a>(
    account: &Address,
    side: Side,
    limit_mct: u64,
    history: impl DoubleEndedIterator<Item = &'a ClearingResult>,
    tariff: &TariffConfig,
) -> MatchEstimate {
    let mut matched = 0u32;
    let mut intervals = 0u32;
    for result in history.rev().take(HISTORY_INTERVALS) {
        intervals += 1;
        let mut book = result.book.clone();
        book.remove_account(account);
        let probe = Order {
            account: *account,
            side,
            energy_wh: 1,
            limit_price_mct: limit_mct,
            interval_id: book.interval_id,
            arrival_seq: ArrivalSeq::new(u64::MAX, u32::MAX),
        };
        book.insert_order(probe).expect("account removed and interval matches");
        let replay = clear_interval(&book, tariff);
        let hit = replay.trades.iter().any(|t| match side {
            Side::Buy => &t.buyer == account,
            Side::Sell => &t.seller == account,
        });
        matched += hit as u32;
    }
    if intervals == 0 {
        MatchEstimate::Unknown
    } else {
        MatchEstimate::Known { matched, intervals }
    }
}
