//! Explorer and agent HTTP API. Every error is JSON
//! `{"error": CODE, "message": ...}`; responses are pure functions of the
//! committed chain, so repeating a query between blocks repeats the bytes.

use std::collections::HashMap;
use std::str::FromStr;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::get;
use axum::{Json, Router};
use gridmarket_core::agent::{estimate_match_probability, AgentError, MatchEstimate, PreferenceUpdate};
use gridmarket_core::explorer::{ChainStore, ExplorerError, Resolution};
use gridmarket_core::identity::{Address, Hash};
use gridmarket_core::market::{Side, TariffConfig};
use gridmarket_core::metering::HouseholdKind;
use serde::Serialize;
use tower_http::cors::CorsLayer;

use crate::agent::{AgentGone, AgentHandle};
use crate::data::{Roster, SharedChain};

#[derive(Clone)]
pub struct ApiState {
    pub chain: SharedChain,
    pub roster: Arc<Roster>,
    /// Absent when serving a chain directory without a live agent.
    pub agent: Option<AgentHandle>,
}

pub fn router(state: ApiState) -> Router {
    Router::new()
        .route("/status", get(status))
        .route("/blocks/{height}", get(block))
        .route("/tx/{hash}", get(transaction))
        .route("/accounts/{address}", get(account))
        .route("/accounts/{address}/trades", get(trades))
        .route("/accounts/{address}/kpis", get(kpis))
        .route("/accounts/{address}/series", get(series))
        .route("/market/intervals/{id}", get(interval))
        .route("/agent/{address}/preferences", get(get_preferences).post(post_preferences))
        .route("/agent/{address}/match_probability", get(match_probability))
        .fallback(|| async { ApiError::new(StatusCode::NOT_FOUND, "NOT_FOUND", "no such endpoint") })
        .layer(CorsLayer::permissive())
        .with_state(state)
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    code: &'static str,
    message: String,
}

impl ApiError {
    fn new(status: StatusCode, code: &'static str, message: impl Into<String>) -> Self {
        Self {
            status,
            code,
            message: message.into(),
        }
    }

    fn query(message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, "INVALID_QUERY", message)
    }

    fn not_found(message: impl Into<String>) -> Self {
        Self::new(StatusCode::NOT_FOUND, "NOT_FOUND", message)
    }
}

#[derive(Serialize)]
struct ErrorBody<'a> {
    error: &'a str,
    message: &'a str,
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = ErrorBody {
            error: self.code,
            message: &self.message,
        };
        (self.status, Json(body)).into_response()
    }
}

impl From<ExplorerError> for ApiError {
    fn from(e: ExplorerError) -> Self {
        let status = match e {
            ExplorerError::NotFound(_) => StatusCode::NOT_FOUND,
            ExplorerError::InvalidRange(_) => StatusCode::BAD_REQUEST,
            ExplorerError::MissingReadings { .. } | ExplorerError::ReadingMismatch { .. } => {
                StatusCode::UNPROCESSABLE_ENTITY
            }
        };
        Self::new(status, e.code(), e.to_string())
    }
}

impl From<AgentError> for ApiError {
    fn from(e: AgentError) -> Self {
        let (status, code) = match e {
            AgentError::UnknownAccount => (StatusCode::NOT_FOUND, "NOT_FOUND"),
            AgentError::BadSignature | AgentError::WrongAccount => (StatusCode::UNAUTHORIZED, "BAD_SIGNATURE"),
            AgentError::StaleUpdate { .. } => (StatusCode::CONFLICT, "STALE_UPDATE"),
            _ => (StatusCode::UNPROCESSABLE_ENTITY, "INVALID_PREFERENCES"),
        };
        Self::new(status, code, e.to_string())
    }
}

impl From<AgentGone> for ApiError {
    fn from(e: AgentGone) -> Self {
        Self::new(StatusCode::SERVICE_UNAVAILABLE, "UNAVAILABLE", e.to_string())
    }
}

fn parse_address(raw: &str) -> Result<Address, ApiError> {
    Address::from_str(raw).map_err(|e| {
        ApiError::new(
            StatusCode::BAD_REQUEST,
            "INVALID_ADDRESS",
            format!("{raw:?}: {e}; expected 64 lowercase hex characters"),
        )
    })
}

fn parse_param<T: FromStr>(q: &HashMap<String, String>, name: &str) -> Result<Option<T>, ApiError>
where
    T::Err: std::fmt::Display,
{
    q.get(name)
        .map(|raw| raw.parse().map_err(|e| ApiError::query(format!("{name}={raw:?}: {e}"))))
        .transpose()
}

/// `from`/`to` default to the first and last cleared interval.
fn window(chain: &ChainStore, q: &HashMap<String, String>) -> Result<(u64, u64), ApiError> {
    let history = &chain.state().clearing_history;
    let from = parse_param(q, "from")?.or(history.first().map(|r| r.interval_id));
    let to = parse_param(q, "to")?.or(history.last().map(|r| r.interval_id));
    match (from, to) {
        (Some(f), Some(t)) => Ok((f, t)),
        _ => Err(ApiError::new(
            StatusCode::BAD_REQUEST,
            "INVALID_RANGE",
            "no interval has cleared yet; pass from and to",
        )),
    }
}

fn read(chain: &SharedChain) -> std::sync::RwLockReadGuard<'_, ChainStore> {
    chain.read().expect("chain lock")
}

#[derive(Serialize)]
struct Status {
    chain_id: String,
    genesis_hash: Hash,
    genesis_time: u64,
    height: u64,
    tip_hash: Option<Hash>,
    last_timestamp: u64,
    current_interval: u64,
    interval_seconds: u64,
    tariff: TariffConfig,
    first_cleared: Option<u64>,
    last_cleared: Option<u64>,
}

async fn status(State(s): State<ApiState>) -> Json<Status> {
    let c = read(&s.chain);
    let g = c.genesis();
    let st = c.state();
    Json(Status {
        chain_id: g.chain_id.clone(),
        genesis_hash: g.hash(),
        genesis_time: g.genesis_time,
        height: c.tip_height(),
        tip_hash: c.blocks().last().map(|b| b.hash()),
        last_timestamp: st.last_timestamp,
        current_interval: st.current_interval_id,
        interval_seconds: g.interval_seconds,
        tariff: g.tariff,
        first_cleared: st.clearing_history.first().map(|r| r.interval_id),
        last_cleared: st.clearing_history.last().map(|r| r.interval_id),
    })
}

async fn block(State(s): State<ApiState>, Path(height): Path<String>) -> Response {
    let height: u64 = match height.parse() {
        Ok(h) => h,
        Err(_) => return ApiError::query(format!("height {height:?} is not a number")).into_response(),
    };
    match read(&s.chain).get_block(height) {
        Ok(b) => Json(b).into_response(),
        Err(e) => ApiError::from(e).into_response(),
    }
}

async fn transaction(State(s): State<ApiState>, Path(raw): Path<String>) -> Response {
    let hash = match Hash::from_str(&raw) {
        Ok(h) => h,
        Err(e) => {
            return ApiError::new(StatusCode::BAD_REQUEST, "INVALID_HASH", format!("{raw:?}: {e}")).into_response()
        }
    };
    match read(&s.chain).get_tx(&hash) {
        Ok(t) => Json(t).into_response(),
        Err(e) => ApiError::from(e).into_response(),
    }
}

async fn account(State(s): State<ApiState>, Path(raw): Path<String>) -> Response {
    let result = parse_address(&raw).and_then(|a| Ok(read(&s.chain).get_account(&a)?));
    match result {
        Ok(v) => Json(v).into_response(),
        Err(e) => e.into_response(),
    }
}

async fn trades(
    State(s): State<ApiState>,
    Path(raw): Path<String>,
    Query(q): Query<HashMap<String, String>>,
) -> Response {
    let a = match parse_address(&raw) {
        Ok(a) => a,
        Err(e) => return e.into_response(),
    };
    let c = read(&s.chain);
    let (from, to) = match (parse_param(&q, "from"), parse_param(&q, "to")) {
        (Ok(f), Ok(t)) => (f.unwrap_or(0), t.unwrap_or(u64::MAX)),
        (Err(e), _) | (_, Err(e)) => return e.into_response(),
    };
    match c.get_trades(&a, from, to) {
        Ok(t) => Json(t).into_response(),
        Err(e) => ApiError::from(e).into_response(),
    }
}

fn with_profile<T>(
    s: &ApiState,
    raw: &str,
    q: &HashMap<String, String>,
    f: impl FnOnce(&ChainStore, &Address, u64, u64, &gridmarket_core::metering::HouseholdProfile) -> Result<T, ExplorerError>,
) -> Result<T, ApiError> {
    let a = parse_address(raw)?;
    let profile = s
        .roster
        .profile(&a)
        .ok_or_else(|| ApiError::not_found(format!("no meter data for account {a}")))?;
    let c = read(&s.chain);
    let (from, to) = window(&c, q)?;
    Ok(f(&c, &a, from, to, profile)?)
}

async fn kpis(State(s): State<ApiState>, Path(raw): Path<String>, Query(q): Query<HashMap<String, String>>) -> Response {
    match with_profile(&s, &raw, &q, |c, a, from, to, p| c.kpis(a, from, to, p)) {
        Ok(k) => Json(k).into_response(),
        Err(e) => e.into_response(),
    }
}

async fn series(State(s): State<ApiState>, Path(raw): Path<String>, Query(q): Query<HashMap<String, String>>) -> Response {
    let resolution = match parse_param::<Resolution>(&q, "resolution") {
        Ok(r) => r.unwrap_or(Resolution::Interval),
        Err(e) => return e.into_response(),
    };
    match with_profile(&s, &raw, &q, |c, a, from, to, p| c.series(a, from, to, p, resolution)) {
        Ok(k) => Json(k).into_response(),
        Err(e) => e.into_response(),
    }
}

async fn interval(State(s): State<ApiState>, Path(raw): Path<String>) -> Response {
    let Ok(id) = raw.parse::<u64>() else {
        return ApiError::query(format!("interval id {raw:?} is not a number")).into_response();
    };
    match read(&s.chain).interval(id) {
        Ok(v) => Json(v).into_response(),
        Err(e) => ApiError::from(e).into_response(),
    }
}

/// The agent and the account it serves.
fn agent_for<'a>(s: &'a ApiState, raw: &str) -> Result<(&'a AgentHandle, Address, HouseholdKind), ApiError> {
    let a = parse_address(raw)?;
    let agent = s
        .agent
        .as_ref()
        .ok_or_else(|| ApiError::not_found("this node runs no agent"))?;
    let kind = agent
        .kind(&a)
        .ok_or_else(|| ApiError::not_found(format!("agent does not serve account {a}")))?;
    Ok((agent, a, kind))
}

async fn get_preferences(State(s): State<ApiState>, Path(raw): Path<String>) -> Response {
    let r = async {
        let (agent, a, _) = agent_for(&s, &raw)?;
        agent
            .preferences(a)
            .await?
            .ok_or_else(|| ApiError::not_found(format!("no preferences for {a}")))
    };
    match r.await {
        Ok(p) => Json(p).into_response(),
        Err(e) => e.into_response(),
    }
}

async fn post_preferences(State(s): State<ApiState>, Path(raw): Path<String>, body: Bytes) -> Response {
    let r = async {
        let (agent, a, _) = agent_for(&s, &raw)?;
        let update: PreferenceUpdate = serde_json::from_slice(&body)
            .map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, "INVALID_BODY", e.to_string()))?;
        Ok::<_, ApiError>(agent.update(a, update).await??)
    };
    match r.await {
        Ok(p) => Json(p).into_response(),
        Err(e) => e.into_response(),
    }
}

#[derive(Serialize)]
struct Probability {
    account: Address,
    side: Side,
    /// The requested limit clamped into the tariff band, as the agent would store it.
    limit_mct: u64,
    #[serde(flatten)]
    estimate: MatchEstimate,
    probability: Option<f64>,
}

async fn match_probability(
    State(s): State<ApiState>,
    Path(raw): Path<String>,
    Query(q): Query<HashMap<String, String>>,
) -> Response {
    let r = (|| {
        let (agent, a, kind) = agent_for(&s, &raw)?;
        let side = match q.get("side").map(|v| v.to_ascii_uppercase()) {
            Some(v) if v == "BUY" => Side::Buy,
            Some(v) if v == "SELL" => Side::Sell,
            other => return Err(ApiError::query(format!("side={other:?}; use BUY or SELL"))),
        };
        if side == Side::Sell && kind == HouseholdKind::Consumer {
            return Err(ApiError::query("consumers cannot sell"));
        }
        let limit: u64 = parse_param(&q, "limit")?.ok_or_else(|| ApiError::query("limit is required"))?;
        let limit_mct = agent.tariff().clamp(limit);
        let c = read(&s.chain);
        let tariff = c.genesis().tariff;
        let history = c.state().clearing_history.iter().map(|r| r.as_ref());
        let estimate = estimate_match_probability(&a, side, limit_mct, history, &tariff);
        Ok(Probability {
            account: a,
            side,
            limit_mct,
            probability: estimate.probability(),
            estimate,
        })
    })();
    match r {
        Ok(p) => Json(p).into_response(),
        Err(e) => e.into_response(),
    }
}
