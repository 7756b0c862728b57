//! Monetary settlement of one clearing.
//!
//! Prices are milli-cents per kWh and energy is Wh, so `price * energy` is
//! exactly micro-cents. Every money movement is recorded as a pair (or
//! triple) of entries that cancel, so a clearing always sums to zero.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use super::clearing::{Residual, Trade};
use super::TariffConfig;
use crate::identity::Address;

/// Who money moves to or from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Party {
    Account(Address),
    Utility,
    GridOperator,
}

impl fmt::Display for Party {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Party::Account(a) => write!(f, "{a}"),
            Party::Utility => f.write_str("UTILITY"),
            Party::GridOperator => f.write_str("GRID_OPERATOR"),
        }
    }
}

impl FromStr for Party {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "UTILITY" => Ok(Party::Utility),
            "GRID_OPERATOR" => Ok(Party::GridOperator),
            other => other.parse().map(Party::Account).map_err(|e| format!("bad party {other:?}: {e}")),
        }
    }
}

impl Serialize for Party {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Party {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        String::deserialize(deserializer)?.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum SettlementKind {
    LocalTrade,
    UtilitySale,
    UtilityPurchase,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SettlementEntry {
    pub party: Party,
    /// Positive when the party receives money.
    pub amount_uct: i64,
    pub kind: SettlementKind,
    /// Index into the trades, utility sales or utility purchases list,
    /// depending on `kind`.
    pub source_index: u32,
}

fn uct(price_mct: u64, energy_wh: u64) -> i64 {
    i64::try_from(price_mct as u128 * energy_wh as u128).expect("settlement amount exceeds i64 micro-cents")
}

pub fn settle(
    trades: &[Trade],
    utility_sales: &[Residual],
    utility_purchases: &[Residual],
    tariff: &TariffConfig,
) -> Vec<SettlementEntry> {
    let mut out = Vec::with_capacity(trades.len() * 3 + utility_sales.len() * 3 + utility_purchases.len() * 2);
    let mut push = |party, amount_uct, kind, idx: usize| {
        out.push(SettlementEntry {
            party,
            amount_uct,
            kind,
            source_index: idx as u32,
        })
    };

    for (idx, t) in trades.iter().enumerate() {
        let energy = uct(t.price_mct, t.energy_wh);
        let fee = uct(tariff.grid_fee_local_mct, t.energy_wh);
        push(Party::Account(t.buyer), -(energy + fee), SettlementKind::LocalTrade, idx);
        push(Party::Account(t.seller), energy, SettlementKind::LocalTrade, idx);
        push(Party::GridOperator, fee, SettlementKind::LocalTrade, idx);
    }
    for (idx, s) in utility_sales.iter().enumerate() {
        let energy = uct(tariff.retail_energy_mct, s.energy_wh);
        let fee = uct(tariff.grid_fee_full_mct, s.energy_wh);
        push(Party::Account(s.account), -(energy + fee), SettlementKind::UtilitySale, idx);
        push(Party::Utility, energy, SettlementKind::UtilitySale, idx);
        push(Party::GridOperator, fee, SettlementKind::UtilitySale, idx);
    }
    for (idx, p) in utility_purchases.iter().enumerate() {
        let energy = uct(tariff.feed_in_mct, p.energy_wh);
        push(Party::Account(p.account), energy, SettlementKind::UtilityPurchase, idx);
        push(Party::Utility, -energy, SettlementKind::UtilityPurchase, idx);
    }
    out
}
