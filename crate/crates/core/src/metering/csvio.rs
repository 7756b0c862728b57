use std::collections::HashMap;
use std::io::{Read, Write};
use std::path::Path;

use chrono::{DateTime, TimeZone, Utc};

use super::{HouseholdKind, HouseholdProfile, MeterReading, MeteringError};

const COLUMNS: [&str; 5] = ["timestamp_utc", "household_id", "consumption_wh", "production_wh", "battery_wh"];

/// Parse an ISO 8601 UTC timestamp with a `Z` suffix into unix seconds.
pub fn parse_timestamp(s: &str) -> Result<u64, String> {
    if !s.ends_with('Z') {
        return Err(format!("timestamp {s:?} must end in Z"));
    }
    let t = DateTime::parse_from_rfc3339(s).map_err(|e| format!("timestamp {s:?}: {e}"))?;
    u64::try_from(t.timestamp()).map_err(|_| format!("timestamp {s:?} is before 1970"))
}

pub fn format_timestamp(unix: u64) -> String {
    Utc.timestamp_opt(unix as i64, 0)
        .single()
        .map(|t| t.format("%Y-%m-%dT%H:%M:%SZ").to_string())
        .unwrap_or_else(|| unix.to_string())
}

fn field<T: std::str::FromStr>(rec: &csv::StringRecord, i: usize, line: u64) -> Result<T, MeteringError>
where
    T::Err: std::fmt::Display,
{
    let raw = rec.get(i).unwrap_or("").trim();
    raw.parse().map_err(|e| MeteringError::Row {
        line,
        reason: format!("{}: {raw:?}: {e}", COLUMNS[i]),
    })
}

/// Parse profile CSV. Households appear in order of first occurrence;
/// rows may be in any order. A household with any production or battery
/// energy is a prosumer. Capacities are not in the CSV and are left at 0.
pub fn parse_profiles<R: Read>(reader: R, interval_seconds: u64) -> Result<Vec<HouseholdProfile>, MeteringError> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let header = rdr.headers().map_err(|e| MeteringError::Row {
        line: 1,
        reason: e.to_string(),
    })?;
    let names: Vec<&str> = header.iter().map(str::trim).collect();
    if names != COLUMNS {
        return Err(MeteringError::Row {
            line: 1,
            reason: format!("expected columns {}, got {}", COLUMNS.join(","), names.join(",")),
        });
    }

    let mut order: Vec<String> = Vec::new();
    let mut rows: HashMap<String, Vec<(u64, MeterReading)>> = HashMap::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| MeteringError::Row {
            line: e.position().map_or(0, |p| p.line()),
            reason: e.to_string(),
        })?;
        let line = rec.position().map_or(0, |p| p.line());
        let ts = parse_timestamp(rec.get(0).unwrap_or("").trim()).map_err(|reason| MeteringError::Row { line, reason })?;
        if ts % interval_seconds != 0 {
            return Err(MeteringError::Row {
                line,
                reason: format!("timestamp is not aligned to a {interval_seconds} s interval start"),
            });
        }
        let household_id = rec.get(1).unwrap_or("").trim().to_string();
        if household_id.is_empty() {
            return Err(MeteringError::Row {
                line,
                reason: "household_id is empty".into(),
            });
        }
        let reading = MeterReading {
            household_id: household_id.clone(),
            interval_id: ts / interval_seconds,
            consumption_wh: field(&rec, 2, line)?,
            production_wh: field(&rec, 3, line)?,
            battery_wh: field(&rec, 4, line)?,
        };
        rows.entry(household_id.clone())
            .or_insert_with(|| {
                order.push(household_id);
                Vec::new()
            })
            .push((line, reading));
    }

    let mut profiles = Vec::with_capacity(order.len());
    for id in order {
        let mut list = rows.remove(&id).expect("recorded");
        list.sort_by_key(|(line, r)| (r.interval_id, *line));
        for pair in list.windows(2) {
            let (a, b) = (&pair[0].1, &pair[1]);
            if a.interval_id == b.1.interval_id {
                return Err(MeteringError::Duplicate {
                    line: b.0,
                    household: id,
                    interval_id: a.interval_id,
                });
            }
            if b.1.interval_id > a.interval_id + 1 {
                return Err(MeteringError::Gap {
                    household: id,
                    from: a.interval_id + 1,
                    to: b.1.interval_id - 1,
                });
            }
        }
        let readings: Vec<MeterReading> = list.into_iter().map(|(_, r)| r).collect();
        let prosumer = readings.iter().any(|r| r.production_wh > 0 || r.battery_wh != 0);
        profiles.push(HouseholdProfile {
            household_id: id,
            kind: if prosumer {
                HouseholdKind::Prosumer
            } else {
                HouseholdKind::Consumer
            },
            pv_kwp: 0.0,
            battery_kwh: 0.0,
            readings,
        });
    }
    Ok(profiles)
}

pub fn load_profiles(path: &Path, interval_seconds: u64) -> Result<Vec<HouseholdProfile>, MeteringError> {
    let file = std::fs::File::open(path).map_err(|e| MeteringError::Io(format!("{}: {e}", path.display())))?;
    parse_profiles(std::io::BufReader::new(file), interval_seconds)
}

/// Write readings interval-major, households in the given order.
pub fn write_profiles<W: Write>(
    out: W,
    profiles: &[HouseholdProfile],
    interval_seconds: u64,
) -> Result<(), MeteringError> {
    let io = |e: csv::Error| MeteringError::Io(e.to_string());
    let mut w = csv::Writer::from_writer(out);
    w.write_record(COLUMNS).map_err(io)?;
    let longest = profiles.iter().map(|p| p.readings.len()).max().unwrap_or(0);
    for i in 0..longest {
        for p in profiles {
            if let Some(r) = p.readings.get(i) {
                w.write_record([
                    format_timestamp(r.interval_id * interval_seconds),
                    r.household_id.clone(),
                    r.consumption_wh.to_string(),
                    r.production_wh.to_string(),
                    r.battery_wh.to_string(),
                ])
                .map_err(io)?;
            }
        }
    }
    w.flush().map_err(|e| MeteringError::Io(e.to_string()))
}
