#![allow(dead_code)]

use std::path::PathBuf;

use gridmarket_core::identity::Address;
use gridmarket_core::market::{ArrivalSeq, Order, OrderBook, Side, TariffConfig};
use gridmarket_core::metering::synthetic::{generate, SyntheticConfig};
use gridmarket_core::metering::HouseholdKind;
use gridmarket_core::sim::Scenario;
use rand::Rng;

pub fn scenario_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../scenarios")
        .join(format!("{name}.json"))
}

pub fn load_scenario(name: &str) -> Scenario {
    Scenario::load(&scenario_path(name)).expect("bundled scenario is valid")
}

pub fn addr(i: u8) -> Address {
    Address([i; 32])
}

/// A book of 0..=max_orders orders with limits inside the tariff band. With
/// `coarse` the limits come from a handful of values so ties are common.
pub fn random_book(rng: &mut impl Rng, max_orders: usize, max_wh: u64, tariff: &TariffConfig, coarse: bool) -> OrderBook {
    let n = rng.random_range(0..=max_orders);
    let orders = (0..n).map(|i| Order {
        account: addr(i as u8 + 1),
        side: if rng.random_bool(0.5) { Side::Buy } else { Side::Sell },
        energy_wh: rng.random_range(1..=max_wh),
        limit_price_mct: if coarse {
            let steps = 4;
            tariff.floor() + (tariff.ceiling() - tariff.floor()) * rng.random_range(0..=steps) / steps
        } else {
            rng.random_range(tariff.floor()..=tariff.ceiling())
        },
        interval_id: 1,
        arrival_seq: ArrivalSeq::new(rng.random_range(1..=3), i as u32),
    });
    OrderBook::from_orders(1, orders).expect("distinct accounts")
}

/// Exhaustive unit oracle: split every order into 1 Wh units, line demand
/// units up highest limit first and supply units cheapest first, and count
/// the positions where the bid still covers the ask.
pub fn unit_curve_volume(book: &OrderBook) -> u64 {
    let units = |side: Side| {
        let mut v: Vec<u64> = book
            .orders()
            .filter(|o| o.side == side)
            .flat_map(|o| std::iter::repeat_n(o.limit_price_mct, o.energy_wh as usize))
            .collect();
        v.sort_unstable();
        v
    };
    let mut demand = units(Side::Buy);
    demand.reverse();
    let supply = units(Side::Sell);
    demand.iter().zip(&supply).take_while(|(b, s)| b >= s).count() as u64
}

/// Local coverage of a scenario's first interval computed from scratch: meter
/// readings to net positions, preferences to clamped limits, unit oracle for
/// the matched volume.
pub fn first_interval_coverage(scenario: &Scenario, seed: u64) -> f64 {
    let t = scenario.tariff;
    let start = scenario.genesis_time() / scenario.interval_seconds;
    let specs: Vec<_> = scenario.households.iter().map(|h| h.spec()).collect();
    let profiles = generate(&specs, &SyntheticConfig::new(start, 1, scenario.interval_seconds, seed));
    let clamp = |p: u64| p.clamp(t.feed_in_mct, t.retail_energy_mct);
    let mut orders = Vec::new();
    for (i, (h, p)) in scenario.households.iter().zip(&profiles).enumerate() {
        let r = &p.readings[0];
        let used = r.consumption_wh as i64 + r.battery_wh.max(0);
        let made = r.production_wh as i64 + (-r.battery_wh).max(0);
        let net = used - made;
        let (side, limit) = match net {
            0 => continue,
            n if n > 0 => (Side::Buy, clamp(h.max_buy_mct.unwrap_or(t.retail_energy_mct))),
            _ => {
                assert_eq!(h.kind, HouseholdKind::Prosumer);
                (Side::Sell, clamp(h.min_sell_mct.unwrap_or(t.feed_in_mct)))
            }
        };
        orders.push(Order {
            account: addr(i as u8 + 1),
            side,
            energy_wh: net.unsigned_abs(),
            limit_price_mct: limit,
            interval_id: start,
            arrival_seq: ArrivalSeq::new(1, i as u32),
        });
    }
    let book = OrderBook::from_orders(start, orders).unwrap();
    let demand = book.demand_wh();
    if demand == 0 {
        return 0.0;
    }
    unit_curve_volume(&book) as f64 / demand as f64
}
