use std::path::Path;
use std::sync::{Arc, RwLock};

use axum::body::{to_bytes, Body, Bytes};
use axum::http::{header, Method, Request, StatusCode};
use axum::Router;
use gridmarket_core::agent::{estimate_match_probability, PreferenceUpdate};
use gridmarket_core::explorer::Resolution;
use gridmarket_core::identity::{Address, KeyPair};
use gridmarket_core::ledger::{Payload, Transaction, TxError};
use gridmarket_core::market::Side;
use gridmarket_core::sim::{run_scenario, Scenario, SimOptions, SimOutcome};
use gridmarket_node::agent::{spawn_agent, AgentHandle, Household};
use gridmarket_node::data::Roster;
use gridmarket_node::http::{router, ApiState};
use serde_json::{json, Value};
use tokio::sync::{broadcast, mpsc, oneshot};
use tower::ServiceExt;

fn toy_day() -> SimOutcome {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios/toy.json");
    let o = run_scenario(&Scenario::load(&path).unwrap(), &SimOptions::new(12, 17)).unwrap();
    assert!(o.passed());
    o
}

fn key_of(o: &SimOutcome, id: &str) -> KeyPair {
    o.scenario.households.iter().find(|h| h.id == id).unwrap().keypair()
}

type Submissions = mpsc::Receiver<(Transaction, oneshot::Sender<Result<(), TxError>>)>;

struct Fixture {
    o: SimOutcome,
    app: Router,
    intervals: broadcast::Sender<u64>,
    submissions: Submissions,
}

fn agent_for(o: &SimOutcome, chain: &gridmarket_node::data::SharedChain) -> (AgentHandle, broadcast::Sender<u64>, Submissions) {
    let households = o
        .households
        .iter()
        .zip(&o.profiles)
        .map(|(h, p)| Household {
            key: key_of(o, &h.id),
            profile: p.clone(),
        })
        .collect();
    let (intervals, rx) = broadcast::channel(8);
    let (submit, submissions) = mpsc::channel(8);
    let (handle, _task) = spawn_agent(households, o.genesis.tariff, chain.clone(), rx, submit);
    (handle, intervals, submissions)
}

fn fixture() -> Fixture {
    let o = toy_day();
    let chain = Arc::new(RwLock::new(o.chain.clone()));
    let roster = Roster::new(&o.households, o.profiles.clone()).unwrap();
    let (agent, intervals, submissions) = agent_for(&o, &chain);
    let app = router(ApiState {
        chain,
        roster: Arc::new(roster),
        agent: Some(agent),
    });
    Fixture {
        o,
        app,
        intervals,
        submissions,
    }
}

async fn call(app: &Router, req: Request<Body>) -> (StatusCode, Bytes) {
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    (status, to_bytes(resp.into_body(), usize::MAX).await.unwrap())
}

async fn get(app: &Router, uri: &str) -> (StatusCode, Value) {
    let (status, body) = call(app, Request::get(uri).body(Body::empty()).unwrap()).await;
    (status, serde_json::from_slice(&body).unwrap_or_else(|e| panic!("{uri}: {e}")))
}

async fn post(app: &Router, uri: &str, body: String) -> (StatusCode, Value) {
    let req = Request::post(uri)
        .header(header::CONTENT_TYPE, "application/json")
        .body(Body::from(body))
        .unwrap();
    let (status, body) = call(app, req).await;
    (status, serde_json::from_slice(&body).unwrap())
}

/// Exact bytes: parsing floats back through `Value` is not lossless.
async fn get_bytes(app: &Router, uri: &str) -> Bytes {
    let (status, body) = call(app, Request::get(uri).body(Body::empty()).unwrap()).await;
    assert_eq!(status, StatusCode::OK, "{uri}");
    body
}

fn json_bytes<T: serde::Serialize>(v: &T) -> Bytes {
    Bytes::from(serde_json::to_vec(v).unwrap())
}

async fn expect_error(app: &Router, uri: &str, status: StatusCode, code: &str) {
    let (s, v) = get(app, uri).await;
    assert_eq!((s, v["error"].as_str()), (status, Some(code)), "{uri}: {v}");
    assert!(v["message"].is_string());
}

fn cleared_window(o: &SimOutcome) -> (u64, u64) {
    let h = &o.chain.state().clearing_history;
    (h[0].interval_id, h[h.len() - 1].interval_id)
}

#[tokio::test]
async fn status_reports_the_chain() {
    let f = fixture();
    let (s, v) = get(&f.app, "/status").await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(v["chain_id"], "gridmarket-toy");
    assert_eq!(v["height"], f.o.chain.tip_height());
    assert_eq!(v["genesis_hash"], f.o.genesis.hash().to_string());
    assert_eq!(v["interval_seconds"], 900);
    assert_eq!(v["tariff"], serde_json::to_value(f.o.genesis.tariff).unwrap());
    assert_eq!(v["current_interval"], f.o.chain.state().current_interval_id);
    let (first, last) = cleared_window(&f.o);
    assert_eq!((v["first_cleared"].as_u64(), v["last_cleared"].as_u64()), (Some(first), Some(last)));
}

#[tokio::test]
async fn cors_allows_any_origin() {
    let f = fixture();
    let req = Request::builder()
        .method(Method::OPTIONS)
        .uri("/status")
        .header(header::ORIGIN, "http://localhost:5173")
        .header(header::ACCESS_CONTROL_REQUEST_METHOD, "GET")
        .body(Body::empty())
        .unwrap();
    let resp = f.app.clone().oneshot(req).await.unwrap();
    assert!(resp.status().is_success());
    assert_eq!(resp.headers()[header::ACCESS_CONTROL_ALLOW_ORIGIN], "*");
}

#[tokio::test]
async fn blocks_and_transactions() {
    let f = fixture();
    let b = f.o.chain.blocks().iter().find(|b| !b.transactions.is_empty()).unwrap();
    let (s, v) = get(&f.app, &format!("/blocks/{}", b.height)).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(v, serde_json::to_value(b).unwrap());

    let tx = &b.transactions[0];
    let (s, v) = get(&f.app, &format!("/tx/{}", tx.hash())).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!((v["height"].as_u64(), v["index"].as_u64()), (Some(b.height), Some(0)));
    assert_eq!(v["tx"], serde_json::to_value(tx).unwrap());

    expect_error(&f.app, "/blocks/0", StatusCode::NOT_FOUND, "NOT_FOUND").await;
    let beyond = format!("/blocks/{}", f.o.chain.tip_height() + 1);
    expect_error(&f.app, &beyond, StatusCode::NOT_FOUND, "NOT_FOUND").await;
    expect_error(&f.app, "/blocks/one", StatusCode::BAD_REQUEST, "INVALID_QUERY").await;
    expect_error(&f.app, &format!("/tx/{}", "0".repeat(64)), StatusCode::NOT_FOUND, "NOT_FOUND").await;
    let upper = tx.hash().to_string().to_uppercase();
    expect_error(&f.app, &format!("/tx/{upper}"), StatusCode::BAD_REQUEST, "INVALID_HASH").await;
}

#[tokio::test]
async fn accounts_and_address_validation() {
    let f = fixture();
    for h in &f.o.households {
        let (s, v) = get(&f.app, &format!("/accounts/{}", h.address)).await;
        assert_eq!(s, StatusCode::OK);
        let want = f.o.chain.get_account(&h.address).unwrap();
        assert_eq!(v, serde_json::to_value(want).unwrap());
    }
    let a = f.o.households[0].address.to_string();
    for bad in [a.to_uppercase(), a[..62].to_string(), format!("{}zz", &a[..62])] {
        for path in ["", "/trades", "/kpis", "/series"] {
            expect_error(&f.app, &format!("/accounts/{bad}{path}"), StatusCode::BAD_REQUEST, "INVALID_ADDRESS").await;
        }
        expect_error(&f.app, &format!("/agent/{bad}/preferences"), StatusCode::BAD_REQUEST, "INVALID_ADDRESS").await;
    }
    let stranger = Address([7; 32]);
    expect_error(&f.app, &format!("/accounts/{stranger}"), StatusCode::NOT_FOUND, "NOT_FOUND").await;
    expect_error(&f.app, &format!("/accounts/{stranger}/kpis"), StatusCode::NOT_FOUND, "NOT_FOUND").await;
}

#[tokio::test]
async fn trades_kpis_and_series_match_the_store() {
    let f = fixture();
    let (first, last) = cleared_window(&f.o);
    let mut traded = 0;
    for (h, p) in f.o.households.iter().zip(&f.o.profiles) {
        let a = h.address;
        let (_, v) = get(&f.app, &format!("/accounts/{a}/trades")).await;
        let want = f.o.chain.get_trades(&a, first, last).unwrap();
        traded += want.len();
        assert_eq!(v, serde_json::to_value(&want).unwrap());
        let (_, v) = get(&f.app, &format!("/accounts/{a}/trades?from={}&to={}", first + 2, first + 5)).await;
        assert_eq!(v, serde_json::to_value(f.o.chain.get_trades(&a, first + 2, first + 5).unwrap()).unwrap());

        let body = get_bytes(&f.app, &format!("/accounts/{a}/kpis")).await;
        assert_eq!(body, json_bytes(&f.o.chain.kpis(&a, first, last, p).unwrap()));
        let body = get_bytes(&f.app, &format!("/accounts/{a}/kpis?from={first}&to={}", first + 3)).await;
        assert_eq!(body, json_bytes(&f.o.chain.kpis(&a, first, first + 3, p).unwrap()));

        let (_, v) = get(&f.app, &format!("/accounts/{a}/series")).await;
        let want = f.o.chain.series(&a, first, last, p, Resolution::Interval).unwrap();
        assert_eq!(v.as_array().unwrap().len(), 12);
        assert_eq!(v, serde_json::to_value(&want).unwrap());
        let (_, v) = get(&f.app, &format!("/accounts/{a}/series?resolution=hour")).await;
        assert_eq!(v.as_array().unwrap().len(), 3);
        assert!(v.as_array().unwrap().iter().all(|p| p["intervals"] == 4));
    }
    assert!(traded > 0);

    let a = f.o.households[0].address;
    let range = format!("/accounts/{a}/trades?from=5&to=4");
    expect_error(&f.app, &range, StatusCode::BAD_REQUEST, "INVALID_RANGE").await;
    let beyond = format!("/accounts/{a}/kpis?from={first}&to={}", last + 1);
    expect_error(&f.app, &beyond, StatusCode::BAD_REQUEST, "INVALID_RANGE").await;
    let bad = format!("/accounts/{a}/series?resolution=week");
    expect_error(&f.app, &bad, StatusCode::BAD_REQUEST, "INVALID_QUERY").await;
    let bad = format!("/accounts/{a}/kpis?from=soon");
    expect_error(&f.app, &bad, StatusCode::BAD_REQUEST, "INVALID_QUERY").await;
}

#[tokio::test]
async fn missing_readings_are_unprocessable() {
    let o = toy_day();
    let mut profiles = o.profiles.clone();
    profiles[0].readings.pop();
    let app = router(ApiState {
        chain: Arc::new(RwLock::new(o.chain.clone())),
        roster: Arc::new(Roster::new(&o.households, profiles).unwrap()),
        agent: None,
    });
    let uri = format!("/accounts/{}/kpis", o.households[0].address);
    expect_error(&app, &uri, StatusCode::UNPROCESSABLE_ENTITY, "MISSING_READINGS").await;
    let (s, _) = get(&app, &format!("/accounts/{}/kpis", o.households[1].address)).await;
    assert_eq!(s, StatusCode::OK);
    let uri = format!("/agent/{}/preferences", o.households[1].address);
    expect_error(&app, &uri, StatusCode::NOT_FOUND, "NOT_FOUND").await;
}

#[tokio::test]
async fn interval_view_is_anonymous() {
    let f = fixture();
    let (first, last) = cleared_window(&f.o);
    for id in first..=last {
        let uri = format!("/market/intervals/{id}");
        assert_eq!(get_bytes(&f.app, &uri).await, json_bytes(&f.o.chain.interval(id).unwrap()));
        let (_, v) = get(&f.app, &uri).await;
        for o in v["buys"].as_array().unwrap().iter().chain(v["sells"].as_array().unwrap()) {
            assert!(o.get("account").is_none());
        }
    }
    expect_error(&f.app, &format!("/market/intervals/{}", last + 1), StatusCode::NOT_FOUND, "NOT_FOUND").await;
    expect_error(&f.app, "/market/intervals/-1", StatusCode::BAD_REQUEST, "INVALID_QUERY").await;
    expect_error(&f.app, "/nowhere", StatusCode::NOT_FOUND, "NOT_FOUND").await;
}

#[tokio::test]
async fn repeated_queries_return_identical_bytes() {
    let f = fixture();
    let a = f.o.households[1].address;
    let (first, _) = cleared_window(&f.o);
    for uri in [
        "/status".to_string(),
        format!("/accounts/{a}/kpis"),
        format!("/accounts/{a}/series?resolution=hour"),
        format!("/accounts/{a}/trades"),
        format!("/market/intervals/{}", first + 4),
        format!("/agent/{a}/match_probability?side=SELL&limit=6000"),
    ] {
        let once = call(&f.app, Request::get(&uri).body(Body::empty()).unwrap()).await;
        let twice = call(&f.app, Request::get(&uri).body(Body::empty()).unwrap()).await;
        assert_eq!(once.0, StatusCode::OK, "{uri}");
        assert_eq!(once, twice, "{uri}");
    }
}

#[tokio::test]
async fn preferences_round_trip_with_signatures() {
    let f = fixture();
    let alice = key_of(&f.o, "alice");
    let carol = key_of(&f.o, "carol");
    let uri = |k: &KeyPair| format!("/agent/{}/preferences", k.address());
    let t = f.o.genesis.tariff;

    // Passive defaults until the first update.
    let (s, v) = get(&f.app, &uri(&alice)).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(v, json!({"account": alice.address(), "max_buy_mct": t.ceiling(), "min_sell_mct": t.floor(), "updated_at": 0}));
    let (_, v) = get(&f.app, &uri(&carol)).await;
    assert!(v.get("min_sell_mct").is_none());

    // Out-of-band limits come back clamped.
    let update = PreferenceUpdate::new_signed(&alice, t.ceiling() + 5000, Some(1), 10);
    let (s, v) = post(&f.app, &uri(&alice), serde_json::to_string(&update).unwrap()).await;
    assert_eq!(s, StatusCode::OK, "{v}");
    assert_eq!((v["max_buy_mct"].as_u64(), v["min_sell_mct"].as_u64()), (Some(t.ceiling()), Some(t.floor())));
    let update = PreferenceUpdate::new_signed(&alice, 6500, Some(6000), 11);
    let (s, stored) = post(&f.app, &uri(&alice), serde_json::to_string(&update).unwrap()).await;
    assert_eq!(s, StatusCode::OK);
    let (_, v) = get(&f.app, &uri(&alice)).await;
    assert_eq!(v, stored);
    assert_eq!((v["max_buy_mct"].as_u64(), v["min_sell_mct"].as_u64()), (Some(6500), Some(6000)));

    let replayed = serde_json::to_string(&update).unwrap();
    let (s, v) = post(&f.app, &uri(&alice), replayed).await;
    assert_eq!((s, v["error"].as_str()), (StatusCode::CONFLICT, Some("STALE_UPDATE")));

    let forged = PreferenceUpdate::new_signed(&carol, 7000, Some(4000), 12);
    let (s, v) = post(&f.app, &uri(&alice), serde_json::to_string(&forged).unwrap()).await;
    assert_eq!((s, v["error"].as_str()), (StatusCode::UNAUTHORIZED, Some("BAD_SIGNATURE")));
    let mut tampered = PreferenceUpdate::new_signed(&alice, 7000, Some(4000), 12);
    tampered.max_buy_mct += 1;
    let (s, _) = post(&f.app, &uri(&alice), serde_json::to_string(&tampered).unwrap()).await;
    assert_eq!(s, StatusCode::UNAUTHORIZED);

    let sells = PreferenceUpdate::new_signed(&carol, 7000, Some(5000), 1);
    let (s, v) = post(&f.app, &uri(&carol), serde_json::to_string(&sells).unwrap()).await;
    assert_eq!((s, v["error"].as_str()), (StatusCode::UNPROCESSABLE_ENTITY, Some("INVALID_PREFERENCES")));

    let (s, v) = post(&f.app, &uri(&alice), "{\"max_buy_mct\": 1".into()).await;
    assert_eq!((s, v["error"].as_str()), (StatusCode::BAD_REQUEST, Some("INVALID_BODY")));

    let stranger = KeyPair::from_label("stranger");
    let body = serde_json::to_string(&PreferenceUpdate::new_signed(&stranger, 7000, None, 1)).unwrap();
    let (s, _) = post(&f.app, &uri(&stranger), body).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn match_probability_replays_history() {
    let f = fixture();
    let t = f.o.genesis.tariff;
    let history = &f.o.chain.state().clearing_history;
    for h in &f.o.households {
        let a = h.address;
        let sides: &[Side] = if h.kind == gridmarket_core::metering::HouseholdKind::Prosumer {
            &[Side::Buy, Side::Sell]
        } else {
            &[Side::Buy]
        };
        for &side in sides {
            let name = if side == Side::Buy { "BUY" } else { "SELL" };
            let mut previous = None;
            for limit in [t.floor(), 5000, 6000, 7000, t.ceiling()] {
                let (s, v) = get(&f.app, &format!("/agent/{a}/match_probability?side={name}&limit={limit}")).await;
                assert_eq!(s, StatusCode::OK, "{v}");
                let want = estimate_match_probability(&a, side, limit, history.iter().map(|r| r.as_ref()), &t);
                assert_eq!(v["probability"].as_f64(), want.probability());
                assert_eq!(v["status"], "KNOWN");
                assert_eq!(v["intervals"].as_u64(), Some(history.len() as u64));
                let p = v["probability"].as_f64().unwrap();
                if let Some(prev) = previous {
                    assert!(if side == Side::Buy { p >= prev } else { p <= prev }, "{name} {limit}");
                }
                previous = Some(p);
            }
        }
    }
    let a = f.o.households[0].address;
    let (_, v) = get(&f.app, &format!("/agent/{a}/match_probability?side=buy&limit={}", t.ceiling() * 2)).await;
    assert_eq!(v["limit_mct"].as_u64(), Some(t.ceiling()));

    let carol = key_of(&f.o, "carol").address();
    let uri = format!("/agent/{carol}/match_probability?side=SELL&limit=5000");
    expect_error(&f.app, &uri, StatusCode::BAD_REQUEST, "INVALID_QUERY").await;
    expect_error(&f.app, &format!("/agent/{a}/match_probability?side=BUY"), StatusCode::BAD_REQUEST, "INVALID_QUERY").await;
    expect_error(&f.app, &format!("/agent/{a}/match_probability?limit=5000"), StatusCode::BAD_REQUEST, "INVALID_QUERY").await;
}

#[tokio::test]
async fn agent_bids_with_the_stored_preferences() {
    let mut f = fixture();
    let alice = key_of(&f.o, "alice");
    let profile = &f.o.profiles[0];
    assert_eq!(profile.household_id, "alice");
    // An interval where alice has a surplus, so she sells at her limit.
    let reading = profile
        .readings
        .iter()
        .find(|r| r.production_wh > r.consumption_wh + r.battery_wh.max(0) as u64)
        .expect("alice exports at some point of the day");
    let update = PreferenceUpdate::new_signed(&alice, 7000, Some(6100), 5);
    let (s, _) = post(&f.app, &format!("/agent/{}/preferences", alice.address()), serde_json::to_string(&update).unwrap()).await;
    assert_eq!(s, StatusCode::OK);

    f.intervals.send(reading.interval_id).unwrap();
    let mut seen = Vec::new();
    while let Ok(Some((tx, reply))) =
        tokio::time::timeout(std::time::Duration::from_secs(2), f.submissions.recv()).await
    {
        reply.send(Ok(())).unwrap();
        seen.push(tx);
    }
    let mine = seen.iter().find(|tx| tx.sender_address == alice.address()).expect("alice bid");
    let Payload::Order(o) = &mine.payload;
    assert_eq!((o.side, o.limit_price_mct, o.interval_id), (Side::Sell, 6100, reading.interval_id));
    assert_eq!(mine.nonce, f.o.chain.state().nonce_of(&alice.address()) + 1);
    // One order per household at most.
    let mut senders: Vec<_> = seen.iter().map(|tx| tx.sender_address).collect();
    senders.dedup();
    assert_eq!(senders.len(), seen.len());
}
