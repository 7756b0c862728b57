//! Simulated smart meters: profile ingestion, net positions and a seeded
//! synthetic profile generator.

mod csvio;
pub mod synthetic;

pub use csvio::{format_timestamp, load_profiles, parse_profiles, parse_timestamp, write_profiles};

use serde::{Deserialize, Serialize};

use crate::market::Side;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum HouseholdKind {
    Prosumer,
    Consumer,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MeterReading {
    pub household_id: String,
    pub interval_id: u64,
    pub consumption_wh: u64,
    pub production_wh: u64,
    /// Positive while charging.
    pub battery_wh: i64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HouseholdProfile {
    pub household_id: String,
    pub kind: HouseholdKind,
    pub pv_kwp: f64,
    pub battery_kwh: f64,
    /// Contiguous, ascending by interval.
    pub readings: Vec<MeterReading>,
}

impl HouseholdProfile {
    pub fn reading(&self, interval_id: u64) -> Option<&MeterReading> {
        let first = self.readings.first()?.interval_id;
        self.readings.get(interval_id.checked_sub(first)? as usize)
    }

    pub fn interval_range(&self) -> Option<(u64, u64)> {
        Some((self.readings.first()?.interval_id, self.readings.last()?.interval_id))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum MeteringError {
    #[error("{0}")]
    Io(String),
    #[error("line {line}: {reason}")]
    Row { line: u64, reason: String },
    #[error("line {line}: second reading for household {household} in interval {interval_id}")]
    Duplicate { line: u64, household: String, interval_id: u64 },
    #[error("household {household}: no readings for intervals {from}..={to}")]
    Gap { household: String, from: u64, to: u64 },
    #[error("household {household}: consumers cannot report production or battery energy")]
    ConsumerWithPv { household: String },
}

/// A household's market position for one interval.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NetPosition {
    Buy(u64),
    Sell(u64),
    Balanced,
}

impl NetPosition {
    pub fn side(&self) -> Option<Side> {
        match self {
            NetPosition::Buy(_) => Some(Side::Buy),
            NetPosition::Sell(_) => Some(Side::Sell),
            NetPosition::Balanced => None,
        }
    }

    pub fn energy_wh(&self) -> u64 {
        match *self {
            NetPosition::Buy(e) | NetPosition::Sell(e) => e,
            NetPosition::Balanced => 0,
        }
    }

    /// Import positive, export negative.
    pub fn signed_wh(&self) -> i128 {
        match *self {
            NetPosition::Buy(e) => e as i128,
            NetPosition::Sell(e) => -(e as i128),
            NetPosition::Balanced => 0,
        }
    }
}

/// `consumption - production + battery`, signed by direction.
pub fn net_position(r: &MeterReading) -> NetPosition {
    let net = r.consumption_wh as i128 - r.production_wh as i128 + r.battery_wh as i128;
    match net {
        n if n > 0 => NetPosition::Buy(u64::try_from(n).unwrap_or(u64::MAX)),
        n if n < 0 => NetPosition::Sell(u64::try_from(-n).unwrap_or(u64::MAX)),
        _ => NetPosition::Balanced,
    }
}
