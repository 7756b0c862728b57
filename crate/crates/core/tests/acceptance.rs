//! Acceptance gate. Runs each criterion in sequence and prints one line per
//! criterion; exits non-zero if any fails.

mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use gridmarket_core::consensus::{Validator, ValidatorSet};
use gridmarket_core::explorer::compute_kpis;
use gridmarket_core::identity::{from_canonical, to_canonical, DirectVerifier, Hash, KeyPair};
use gridmarket_core::ledger::{
    log, AppState, Block, Genesis, GenesisAccount, LedgerError, OrderPayload, Payload, Transaction,
};
use gridmarket_core::market::{
    clear_interval, ArrivalSeq, Order, OrderBook, Party, Residual, SettlementKind, Side, TariffConfig,
    Trade,
};
use gridmarket_core::metering::HouseholdKind;
use gridmarket_core::sim::{run_scenario, NodeStatus, SimOptions, SimOutcome, StopReason};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Verdict = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        if !$cond {
            return Err(format!($($msg)+));
        }
    };
}

fn auction_correctness() -> Verdict {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(0xA0C7);
    let tariffs = [TariffConfig::default(), TariffConfig::new(1000, 20000, 1000, 5000), TariffConfig::new(0, 3, 0, 0)];
    let cases = 12_000;
    let mut traded_cases = 0;
    for case in 0..cases {
        let tariff = tariffs[case % tariffs.len()];
        let book = common::random_book(&mut rng, 6, 2000, &tariff, case % 2 == 0);
        let r = clear_interval(&book, &tariff);
        let expected = common::unit_curve_volume(&book);
        ensure!(
            r.local_volume_wh() == expected,
            "case {case}: volume {} vs oracle {expected} for {:?}",
            r.local_volume_wh(),
            book
        );
        let limit = |a| book.orders().find(|o| o.account == a).map(|o| o.limit_price_mct).unwrap();
        for t in &r.trades {
            let (buy, sell) = (limit(t.buyer), limit(t.seller));
            ensure!(sell <= t.price_mct && t.price_mct <= buy, "case {case}: price {} outside [{sell}, {buy}]", t.price_mct);
            ensure!(t.price_mct == (buy + sell) / 2, "case {case}: price {} is not floor of mean", t.price_mct);
        }
        ensure!(r.settlement_sum_uct() == 0, "case {case}: settlements sum to {}", r.settlement_sum_uct());
        traded_cases += usize::from(!r.trades.is_empty());
    }
    let elapsed = started.elapsed();
    ensure!(elapsed < Duration::from_secs(60), "took {elapsed:?}");
    Ok(format!("{cases} books, {traded_cases} with trades, {elapsed:.2?}"))
}

fn worked_example() -> Verdict {
    let who = |c: char| common::addr(c as u8);
    let order = |c: char, side, wh, price, i| Order {
        account: who(c),
        side,
        energy_wh: wh,
        limit_price_mct: price,
        interval_id: 1,
        arrival_seq: ArrivalSeq::new(1, i),
    };
    let book = OrderBook::from_orders(
        1,
        [
            order('A', Side::Sell, 3000, 4000, 0),
            order('B', Side::Sell, 2000, 8000, 1),
            order('C', Side::Buy, 4000, 10000, 2),
            order('D', Side::Buy, 2000, 6000, 3),
        ],
    )
    .unwrap();
    let r = clear_interval(&book, &TariffConfig::new(1000, 20000, 1000, 5000));
    let trade = |b, s, wh, p| Trade {
        buyer: who(b),
        seller: who(s),
        energy_wh: wh,
        price_mct: p,
        interval_id: 1,
    };
    ensure!(
        r.trades == vec![trade('C', 'A', 3000, 7000), trade('C', 'B', 1000, 9000)],
        "trades {:?}",
        r.trades
    );
    ensure!(
        r.utility_sales == vec![Residual { account: who('D'), energy_wh: 2000 }],
        "utility sales {:?}",
        r.utility_sales
    );
    ensure!(
        r.utility_purchases == vec![Residual { account: who('B'), energy_wh: 1000 }],
        "utility purchases {:?}",
        r.utility_purchases
    );
    ensure!(r.settlement_sum_uct() == 0, "settlements sum to {}", r.settlement_sum_uct());
    Ok("C<-A 3000@7000, C<-B 1000@9000, utility sale D 2000, utility purchase B 1000".into())
}

fn replay_hashes(genesis: &Genesis, blocks: &[Block]) -> Result<Vec<Hash>, LedgerError> {
    let mut state = AppState::from_genesis(genesis);
    let mut hashes = Vec::with_capacity(blocks.len());
    for b in blocks {
        state = state.apply_block(b, &DirectVerifier)?;
        hashes.push(state.state_hash());
    }
    Ok(hashes)
}

fn replication_determinism(run: &SimOutcome) -> Verdict {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    run.write_to(dir.path()).map_err(|e| e.to_string())?;
    let load = || -> Result<(Genesis, Vec<Block>), String> {
        let g = Genesis::load(&dir.path().join("genesis.json")).map_err(|e| e.to_string())?;
        let b = log::BlockLog::read_all(&dir.path().join("chain.log")).map_err(|e| e.to_string())?;
        Ok((g, b))
    };
    let (g1, b1) = load()?;
    let (g2, b2) = load()?;
    let a = replay_hashes(&g1, &b1).map_err(|e| format!("replica A: {e}"))?;
    let b = replay_hashes(&g2, &b2).map_err(|e| format!("replica B: {e}"))?;
    ensure!(run.report.intervals_cleared == 96, "run cleared {} intervals", run.report.intervals_cleared);
    ensure!(a.len() == b.len() && !a.is_empty(), "heights {} vs {}", a.len(), b.len());
    for (h, (x, y)) in a.iter().zip(&b).enumerate() {
        ensure!(x == y, "height {}: {x} vs {y}", h + 1);
        ensure!(*x == b1[h].app_state_hash, "height {}: replay differs from block header", h + 1);
    }
    ensure!(
        a.last() == Some(&run.report.final_state_hash),
        "replayed tip differs from the simulated replica"
    );
    Ok(format!("{} heights identical, tip {}", a.len(), &a[a.len() - 1].to_hex()[..16]))
}

fn bft_availability() -> Verdict {
    let started = Instant::now();
    let base = common::load_scenario("bft4");
    let validators = base.validator_names();
    ensure!(validators.len() == 4, "bft4 has {} validators", validators.len());

    for down in &validators {
        let mut s = base.clone();
        s.faults.crashed = vec![down.clone()];
        let o = run_scenario(&s, &SimOptions::new(96, 11)).map_err(|e| e.to_string())?;
        ensure!(
            o.report.completed && o.report.passed,
            "{down} crashed: cleared {} of 96, failing {:?}",
            o.report.intervals_cleared,
            failing(&o)
        );
    }

    for pair in [[0, 3], [1, 2], [0, 1]] {
        let mut s = base.clone();
        s.faults.crashed = pair.iter().map(|&i| validators[i].clone()).collect();
        let o = run_scenario(&s, &SimOptions::new(96, 12)).map_err(|e| e.to_string())?;
        let heights: Vec<u64> = o.report.consensus.nodes.iter().map(|n| n.height).collect();
        ensure!(heights.iter().all(|&h| h == 0), "{:?} crashed: heights {heights:?}", s.faults.crashed);
        ensure!(o.report.consensus.stop_reason != StopReason::Completed, "reported completion");
        ensure!(o.report.invariant("replica_agreement").unwrap().passed(), "conflicting commits");
    }

    let seeds = 100u64;
    let mut live = 0;
    let mut detected = 0;
    for seed in 0..seeds {
        let mut s = base.clone();
        s.faults.equivocators = vec![validators[seed as usize % 4].clone()];
        let o = run_scenario(&s, &SimOptions::new(16, 1000 + seed)).map_err(|e| e.to_string())?;
        let agree = o.report.invariant("replica_agreement").unwrap();
        ensure!(agree.passed(), "seed {seed}: {:?}", agree.examples);
        ensure!(agree.checked > 0, "seed {seed}: no honest height compared");
        let honest_heights: Vec<u64> = o
            .report
            .consensus
            .nodes
            .iter()
            .filter(|n| n.status == NodeStatus::Honest)
            .map(|n| n.height)
            .collect();
        ensure!(honest_heights.iter().all(|&h| h > 0), "seed {seed}: an honest node never committed");
        live += usize::from(o.report.completed);
        detected += usize::from(o.report.consensus.nodes.iter().any(|n| n.equivocations_seen > 0));
    }
    let elapsed = started.elapsed();
    ensure!(elapsed < Duration::from_secs(300), "took {elapsed:?}");
    Ok(format!(
        "crash-1 x4 all 96 intervals; crash-2 x3 zero commits; {seeds} equivocation seeds safe ({live} fully live, {detected} detected); {elapsed:.2?}"
    ))
}

fn failing(o: &SimOutcome) -> Vec<String> {
    o.report
        .invariants
        .iter()
        .filter(|i| !i.passed())
        .map(|i| format!("{}: {:?}", i.name, i.examples))
        .collect()
}

fn transaction_integrity() -> Verdict {
    let keys: Vec<KeyPair> = (0..8).map(|i| KeyPair::from_label(&format!("tamper-{i}"))).collect();
    let genesis = Genesis {
        chain_id: "tamper".into(),
        genesis_time: 1_559_383_200,
        interval_seconds: 900,
        tariff: TariffConfig::default(),
        accounts: keys
            .iter()
            .map(|k| GenesisAccount {
                address: k.address(),
                balance_uct: 0,
            })
            .collect(),
        validators: ValidatorSet::new(vec![Validator {
            address: keys[0].address(),
            pubkey: keys[0].public_key(),
        }])
        .unwrap(),
    };
    let state = AppState::from_genesis(&genesis);
    let interval = state.current_interval_id;
    let mut rng = ChaCha8Rng::seed_from_u64(0x7A3);
    let mut counts = [0usize; 3];
    let reject_code = |s: &AppState, tx: &Transaction| -> Option<&'static str> {
        let direct = s.verify_transaction(tx, &DirectVerifier).err()?.code();
        let built = s
            .execute(s.height + 1, s.last_timestamp + 1, &s.last_block_hash, std::slice::from_ref(tx), &DirectVerifier)
            .err()?;
        match built {
            LedgerError::InvalidTransaction { error, .. } if error.code() == direct => Some(direct),
            _ => None,
        }
    };

    for i in 0..300 {
        let k = &keys[i % keys.len()];
        let tx = Transaction::new_signed(
            k,
            Payload::Order(OrderPayload {
                side: if rng.random_bool(0.5) { Side::Buy } else { Side::Sell },
                energy_wh: rng.random_range(100..=99_999),
                limit_price_mct: rng.random_range(4000..=8000),
                interval_id: interval,
            }),
            1,
        );
        ensure!(state.verify_transaction(&tx, &DirectVerifier).is_ok(), "untampered tx {i} rejected");

        // Flip one digit inside the payload of the canonical encoding.
        let mut bytes = to_canonical(&tx).unwrap();
        let text = String::from_utf8(bytes.clone()).unwrap();
        let start = text.find("\"payload\":").unwrap();
        let end = start + text[start..].find('}').unwrap();
        let digits: Vec<usize> = (start..end)
            .filter(|&j| bytes[j].is_ascii_digit() && bytes[j - 1].is_ascii_digit())
            .collect();
        let at = digits[rng.random_range(0..digits.len())];
        bytes[at] = if bytes[at] == b'9' { b'1' } else { bytes[at] + 1 };
        let flipped: Transaction = from_canonical(&bytes).map_err(|e| format!("tx {i}: {e}"))?;
        ensure!(flipped.payload != tx.payload, "tx {i}: flip missed the payload");
        ensure!(reject_code(&state, &flipped) == Some("BAD_SIGNATURE"), "tx {i}: flipped payload accepted or miscoded");
        counts[0] += 1;

        let mut wrong = tx.clone();
        wrong.sender_address = keys[(i + 1) % keys.len()].address();
        ensure!(reject_code(&state, &wrong) == Some("ADDRESS_MISMATCH"), "tx {i}: wrong address accepted or miscoded");
        counts[1] += 1;

        let seq = ArrivalSeq::new(1, 0);
        let mut after = state.clone();
        after.apply_transaction(&tx, seq, &DirectVerifier).map_err(|e| format!("tx {i}: {e}"))?;
        ensure!(reject_code(&after, &tx) == Some("BAD_NONCE"), "tx {i}: replay accepted or miscoded");
        counts[2] += 1;
    }
    Ok(format!(
        "rejected {} flipped-payload (BAD_SIGNATURE), {} wrong-address (ADDRESS_MISMATCH), {} replayed (BAD_NONCE)",
        counts[0], counts[1], counts[2]
    ))
}

fn pilot_scale(run: &SimOutcome, elapsed: Duration) -> Verdict {
    let s = &run.scenario;
    let prosumers = s.households.iter().filter(|h| h.kind == HouseholdKind::Prosumer).count();
    let pv: f64 = s.households.iter().map(|h| h.pv_kwp).sum();
    let battery: f64 = s.households.iter().map(|h| h.battery_kwh).sum();
    ensure!(s.households.len() == 37, "{} households", s.households.len());
    ensure!(prosumers == 27, "{prosumers} prosumers");
    ensure!(pv == 280.0, "{pv} kWp");
    ensure!(battery == 80.0, "{battery} kWh");
    ensure!(elapsed < Duration::from_secs(60), "took {elapsed:?}");
    ensure!(run.report.passed, "failing invariants {:?}", failing(run));
    let cov = run.report.coverage();
    ensure!(cov.len() == 96, "{} coverage values", cov.len());
    ensure!(cov.iter().all(|c| (0.0..=1.0).contains(c)), "coverage out of range");
    let every_interval = run.report.invariants.iter().all(|i| i.checked > 0);
    ensure!(every_interval, "an invariant was never evaluated");
    let expected = common::first_interval_coverage(s, run.options.seed);
    ensure!(cov[0] == expected, "first interval coverage {} vs hand-computed {expected}", cov[0]);
    Ok(format!("37/27/280 kWp/80 kWh, 96 intervals in {elapsed:.2?}, first-interval coverage {expected:.6}"))
}

fn price_sanity(run: &SimOutcome) -> Verdict {
    let t = run.chain.state().tariff();
    let mut trades = 0u64;
    for r in &run.chain.state().clearing_history {
        for (i, tr) in r.trades.iter().enumerate() {
            trades += 1;
            ensure!(
                (t.feed_in_mct..=t.retail_energy_mct).contains(&tr.price_mct),
                "interval {} trade {i}: price {}",
                r.interval_id,
                tr.price_mct
            );
            let paid = |party: Party| -> i64 {
                r.settlements
                    .iter()
                    .filter(|e| e.kind == SettlementKind::LocalTrade && e.source_index == i as u32 && e.party == party)
                    .map(|e| e.amount_uct)
                    .sum()
            };
            let wh = tr.energy_wh as i128;
            let buyer_cost = -(paid(Party::Account(tr.buyer)) as i128);
            let seller_gain = paid(Party::Account(tr.seller)) as i128;
            ensure!(
                buyer_cost <= (t.retail_energy_mct + t.grid_fee_full_mct) as i128 * wh,
                "interval {} trade {i}: buyer pays {buyer_cost} uct for {wh} Wh",
                r.interval_id
            );
            ensure!(
                seller_gain >= t.feed_in_mct as i128 * wh,
                "interval {} trade {i}: seller earns {seller_gain} uct for {wh} Wh",
                r.interval_id
            );
        }
    }
    ensure!(trades > 0, "no local trades to check");
    let reported = run.report.invariant("price_sanity").unwrap();
    ensure!(reported.passed(), "report lists {:?}", reported.examples);
    Ok(format!("{trades} trades, 0 violations"))
}

fn kpi_identity(run: &SimOutcome) -> Verdict {
    let cleared = &run.chain.state().clearing_history[..];
    ensure!(cleared.len() == 96, "{} intervals cleared", cleared.len());
    let mut accounts = 0;
    let mut produced_total = 0u64;
    for (h, p) in run.households.iter().zip(&run.profiles) {
        let k = compute_kpis(&h.address, p, cleared).map_err(|e| format!("{}: {e}", h.id))?;
        ensure!(
            k.self_consumed_wh + k.locally_sold_wh + k.grid_sold_wh == k.produced_wh,
            "{}: {} + {} + {} != {}",
            h.id,
            k.self_consumed_wh,
            k.locally_sold_wh,
            k.grid_sold_wh,
            k.produced_wh
        );
        ensure!(
            k.self_supplied_wh + k.locally_bought_wh + k.grid_bought_wh == k.consumed_wh,
            "{}: {} + {} + {} != {}",
            h.id,
            k.self_supplied_wh,
            k.locally_bought_wh,
            k.grid_bought_wh,
            k.consumed_wh
        );
        let earned: i64 = cleared
            .iter()
            .flat_map(|r| r.settlements.iter())
            .filter(|e| e.party == Party::Account(h.address))
            .map(|e| e.amount_uct)
            .sum();
        ensure!(k.net_earnings_uct == earned, "{}: earnings {} vs {earned}", h.id, k.net_earnings_uct);
        accounts += 1;
        produced_total += k.produced_wh;
    }
    Ok(format!("{accounts} accounts exact over 96 intervals ({produced_total} Wh produced)"))
}

fn main() {
    let mut results: Vec<(&str, Verdict)> = Vec::new();
    let mut run = |name: &'static str, f: &mut dyn FnMut() -> Verdict| {
        let verdict = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        let status = if verdict.is_ok() { "PASS" } else { "FAIL" };
        let detail = verdict.as_ref().unwrap_or_else(|e| e);
        println!("{status} {name}: {detail}");
        results.push((name, verdict));
    };

    run("auction_correctness", &mut auction_correctness);
    run("worked_example", &mut worked_example);

    let scenario = common::load_scenario("reference");
    let started = Instant::now();
    let reference = run_scenario(&scenario, &SimOptions::new(96, 42));
    let elapsed = started.elapsed();
    match reference {
        Ok(o) => {
            run("replication_determinism", &mut || replication_determinism(&o));
            run("bft_availability", &mut bft_availability);
            run("transaction_integrity", &mut transaction_integrity);
            run("pilot_scale", &mut || pilot_scale(&o, elapsed));
            run("price_sanity", &mut || price_sanity(&o));
            run("kpi_identity", &mut || kpi_identity(&o));
        }
        Err(e) => {
            for name in ["replication_determinism", "pilot_scale", "price_sanity", "kpi_identity"] {
                run(name, &mut || Err(format!("reference run failed: {e}")));
            }
            run("bft_availability", &mut bft_availability);
            run("transaction_integrity", &mut transaction_integrity);
        }
    }

    let failed = results.iter().filter(|(_, v)| v.is_err()).count();
    println!("acceptance: {} passed, {failed} failed", results.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
