//! Inputs shared by the benchmarks. Everything is seeded so numbers are
//! comparable between runs.

use gridmarket_core::identity::{Address, Hash};
use gridmarket_core::market::{ArrivalSeq, Order, OrderBook, Side, TariffConfig};
use gridmarket_core::sim::{run_scenario, Scenario, SimOptions, SimOutcome};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const INTERVAL: u64 = 1_732_640;

/// `n` orders, roughly half on each side, limits spread over the tariff band.
pub fn order_book(n: usize, seed: u64) -> OrderBook {
    let tariff = TariffConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let orders = (0..n).map(|i| Order {
        account: Address::from_slice(Hash::digest(&(i as u64).to_le_bytes()).as_bytes()).expect("32 bytes"),
        side: if rng.random_bool(0.5) { Side::Buy } else { Side::Sell },
        energy_wh: rng.random_range(1..=2_000),
        limit_price_mct: rng.random_range(tariff.feed_in_mct..=tariff.retail_energy_mct),
        interval_id: INTERVAL,
        arrival_seq: ArrivalSeq::new(1 + i as u64 / 100, (i % 100) as u32),
    });
    OrderBook::from_orders(INTERVAL, orders).expect("generated orders are valid")
}

pub fn toy_scenario() -> Scenario {
    Scenario::from_json(include_str!("../../../scenarios/toy.json")).expect("toy scenario is valid")
}

/// A finished simulation whose chain the replay benchmarks re-execute.
pub fn toy_run(intervals: u64) -> SimOutcome {
    run_scenario(&toy_scenario(), &SimOptions::new(intervals, 7)).expect("toy scenario runs")
}
