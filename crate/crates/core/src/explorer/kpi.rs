//! Household energy accounting.
//!
//! Battery discharge counts as production and charging as consumption, so
//! `consumed - produced` is the household's net position. Export not sold
//! locally went to the utility; the rest of production was used on site.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::ExplorerError;
use crate::identity::Address;
use crate::market::{ClearingResult, Party};
use crate::metering::{format_timestamp, net_position, HouseholdProfile, MeterReading, NetPosition};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IntervalFlows {
    pub interval_id: u64,
    pub produced_wh: u64,
    pub consumed_wh: u64,
    pub self_consumed_wh: u64,
    pub self_supplied_wh: u64,
    pub locally_sold_wh: u64,
    pub locally_bought_wh: u64,
    pub grid_sold_wh: u64,
    pub grid_bought_wh: u64,
    pub earnings_uct: i64,
}

impl IntervalFlows {
    fn add(&mut self, o: &IntervalFlows) {
        self.produced_wh += o.produced_wh;
        self.consumed_wh += o.consumed_wh;
        self.self_consumed_wh += o.self_consumed_wh;
        self.self_supplied_wh += o.self_supplied_wh;
        self.locally_sold_wh += o.locally_sold_wh;
        self.locally_bought_wh += o.locally_bought_wh;
        self.grid_sold_wh += o.grid_sold_wh;
        self.grid_bought_wh += o.grid_bought_wh;
        self.earnings_uct += o.earnings_uct;
    }
}

pub fn interval_flows(
    account: &Address,
    reading: &MeterReading,
    result: &ClearingResult,
) -> Result<IntervalFlows, ExplorerError> {
    let id = result.interval_id;
    let discharge = reading.battery_wh.min(0).unsigned_abs();
    let charge = reading.battery_wh.max(0) as u64;
    let produced_wh = reading.production_wh + discharge;
    let consumed_wh = reading.consumption_wh + charge;
    let (import, export) = match net_position(reading) {
        NetPosition::Buy(e) => (e, 0),
        NetPosition::Sell(e) => (0, e),
        NetPosition::Balanced => (0, 0),
    };
    let locally_sold_wh: u64 = result.trades.iter().filter(|t| &t.seller == account).map(|t| t.energy_wh).sum();
    let locally_bought_wh: u64 = result.trades.iter().filter(|t| &t.buyer == account).map(|t| t.energy_wh).sum();
    let mismatch = |detail: String| ExplorerError::ReadingMismatch { interval_id: id, detail };
    let grid_sold_wh = export
        .checked_sub(locally_sold_wh)
        .ok_or_else(|| mismatch(format!("sold {locally_sold_wh} Wh locally but exported {export} Wh")))?;
    let grid_bought_wh = import
        .checked_sub(locally_bought_wh)
        .ok_or_else(|| mismatch(format!("bought {locally_bought_wh} Wh locally but imported {import} Wh")))?;
    let party = Party::Account(*account);
    Ok(IntervalFlows {
        interval_id: id,
        produced_wh,
        consumed_wh,
        self_consumed_wh: produced_wh - export,
        self_supplied_wh: consumed_wh - import,
        locally_sold_wh,
        locally_bought_wh,
        grid_sold_wh,
        grid_bought_wh,
        earnings_uct: result.settlements.iter().filter(|s| s.party == party).map(|s| s.amount_uct).sum(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KpiReport {
    pub account: Address,
    pub from_interval: u64,
    pub to_interval: u64,
    pub produced_wh: u64,
    pub consumed_wh: u64,
    pub self_consumed_wh: u64,
    pub self_supplied_wh: u64,
    pub locally_sold_wh: u64,
    pub locally_bought_wh: u64,
    pub grid_sold_wh: u64,
    pub grid_bought_wh: u64,
    /// self_consumed / produced, 0 without production.
    pub self_consumption_ratio: f64,
    /// (consumed - locally_bought - grid_bought) / consumed, 0 without consumption.
    pub self_sufficiency_ratio: f64,
    pub net_earnings_uct: i64,
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

fn flows_in_window<'a>(
    account: &Address,
    profile: &'a HouseholdProfile,
    cleared: &'a [Arc<ClearingResult>],
) -> impl Iterator<Item = Result<IntervalFlows, ExplorerError>> + 'a {
    let account = *account;
    cleared.iter().map(move |r| {
        let reading = profile.reading(r.interval_id).ok_or(ExplorerError::MissingReadings {
            from: r.interval_id,
            to: r.interval_id,
        })?;
        interval_flows(&account, reading, r)
    })
}

fn check_coverage(profile: &HouseholdProfile, from: u64, to: u64) -> Result<(), ExplorerError> {
    match profile.interval_range() {
        Some((first, last)) if first <= from && to <= last => Ok(()),
        Some((first, last)) if first <= to && from <= last => Err(if from < first {
            ExplorerError::MissingReadings { from, to: first - 1 }
        } else {
            ExplorerError::MissingReadings { from: last + 1, to }
        }),
        _ => Err(ExplorerError::MissingReadings { from, to }),
    }
}

/// KPIs over the cleared intervals `cleared`, which must be contiguous.
pub fn compute_kpis(
    account: &Address,
    profile: &HouseholdProfile,
    cleared: &[Arc<ClearingResult>],
) -> Result<KpiReport, ExplorerError> {
    let (Some(first), Some(last)) = (cleared.first(), cleared.last()) else {
        return Err(ExplorerError::InvalidRange("empty window".into()));
    };
    let (from, to) = (first.interval_id, last.interval_id);
    check_coverage(profile, from, to)?;
    let mut total = IntervalFlows::default();
    for f in flows_in_window(account, profile, cleared) {
        total.add(&f?);
    }
    Ok(KpiReport {
        account: *account,
        from_interval: from,
        to_interval: to,
        produced_wh: total.produced_wh,
        consumed_wh: total.consumed_wh,
        self_consumed_wh: total.self_consumed_wh,
        self_supplied_wh: total.self_supplied_wh,
        locally_sold_wh: total.locally_sold_wh,
        locally_bought_wh: total.locally_bought_wh,
        grid_sold_wh: total.grid_sold_wh,
        grid_bought_wh: total.grid_bought_wh,
        self_consumption_ratio: ratio(total.self_consumed_wh, total.produced_wh),
        self_sufficiency_ratio: ratio(
            total.consumed_wh - total.locally_bought_wh - total.grid_bought_wh,
            total.consumed_wh,
        ),
        net_earnings_uct: total.earnings_uct,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Resolution {
    Interval,
    Hour,
    Day,
}

impl std::str::FromStr for Resolution {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "interval" => Ok(Resolution::Interval),
            "hour" => Ok(Resolution::Hour),
            "day" => Ok(Resolution::Day),
            _ => Err(format!("unknown resolution {s:?}; use interval, hour or day")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeriesPoint {
    /// Unix seconds at the start of the bucket.
    pub start: u64,
    pub start_utc: String,
    pub intervals: u32,
    #[serde(flatten)]
    pub flows: IntervalFlows,
}

/// Flows bucketed by `resolution`. Each point's `flows.interval_id` is the
/// first interval in its bucket.
pub fn series(
    account: &Address,
    profile: &HouseholdProfile,
    cleared: &[Arc<ClearingResult>],
    interval_seconds: u64,
    resolution: Resolution,
) -> Result<Vec<SeriesPoint>, ExplorerError> {
    if let (Some(first), Some(last)) = (cleared.first(), cleared.last()) {
        check_coverage(profile, first.interval_id, last.interval_id)?;
    }
    let bucket = match resolution {
        Resolution::Interval => interval_seconds,
        Resolution::Hour => 3600.max(interval_seconds),
        Resolution::Day => 86_400.max(interval_seconds),
    };
    let mut out: Vec<SeriesPoint> = Vec::new();
    for f in flows_in_window(account, profile, cleared) {
        let f = f?;
        let start = f.interval_id * interval_seconds / bucket * bucket;
        match out.last_mut() {
            Some(p) if p.start == start => {
                p.flows.add(&f);
                p.intervals += 1;
            }
            _ => out.push(SeriesPoint {
                start,
                start_utc: format_timestamp(start),
                intervals: 1,
                flows: f,
            }),
        }
    }
    Ok(out)
}
