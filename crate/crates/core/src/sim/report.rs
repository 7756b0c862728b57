use std::collections::{BTreeMap, BTreeSet};

use serde::Serialize;

use super::{AgentStats, HouseholdRecord, Scenario, SimNode, SimOptions, StopReason};
use crate::explorer::{compute_kpis, ChainStore};
use crate::identity::{Address, DirectVerifier, Hash};
use crate::ledger::{AppState, Genesis};
use crate::market::checks::{check_clearing, ALL as ALL_CHECKS};
use crate::market::{local_coverage, Party};
use crate::metering::{format_timestamp, net_position, HouseholdKind, HouseholdProfile, NetPosition};

const EXAMPLES_KEPT: usize = 5;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IntervalRow {
    pub interval_id: u64,
    pub start_utc: String,
    pub buy_orders: u64,
    pub sell_orders: u64,
    pub demand_wh: u64,
    pub supply_wh: u64,
    pub local_volume_wh: u64,
    pub trades: u64,
    pub utility_sales_wh: u64,
    pub utility_purchases_wh: u64,
    pub local_coverage: f64,
    pub mean_local_price_mct: Option<f64>,
    pub violations: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct BalanceRow {
    /// Household id, `utility` or `grid_operator`.
    pub party: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub address: Option<Address>,
    pub balance_uct: i64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct InvariantResult {
    pub name: String,
    pub checked: u64,
    pub violations: u64,
    pub examples: Vec<String>,
}

impl InvariantResult {
    fn new(name: &str) -> Self {
        Self {
            name: name.to_string(),
            checked: 0,
            violations: 0,
            examples: Vec::new(),
        }
    }

    fn check(&mut self, ok: bool, detail: impl FnOnce() -> String) {
        self.checked += 1;
        if !ok {
            self.fail(detail());
        }
    }

    fn fail(&mut self, detail: String) {
        self.violations += 1;
        if self.examples.len() < EXAMPLES_KEPT {
            self.examples.push(detail);
        }
    }

    pub fn passed(&self) -> bool {
        self.violations == 0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum NodeRole {
    Validator,
    Light,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum NodeStatus {
    Honest,
    Crashed,
    Equivocator,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct NodeSummary {
    pub name: String,
    pub role: NodeRole,
    pub status: NodeStatus,
    pub height: u64,
    pub max_commit_round: u32,
    pub rounds_started: u64,
    pub dropped_invalid: u64,
    pub equivocations_seen: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ConsensusSummary {
    pub validators: usize,
    pub heights_committed: u64,
    /// Highest round at which any honest node committed.
    pub max_commit_round: u32,
    pub logical_ms: u64,
    pub events_processed: u64,
    pub stop_reason: StopReason,
    pub nodes: Vec<NodeSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimReport {
    pub scenario: String,
    pub seed: u64,
    pub households: usize,
    pub prosumers: usize,
    pub pv_kwp_total: f64,
    pub battery_kwh_total: f64,
    pub intervals_requested: u64,
    pub intervals_cleared: u64,
    pub completed: bool,
    pub genesis_hash: Hash,
    pub final_height: u64,
    pub final_state_hash: Hash,
    pub intervals: Vec<IntervalRow>,
    pub balances: Vec<BalanceRow>,
    pub invariants: Vec<InvariantResult>,
    pub consensus: ConsensusSummary,
    pub agents: AgentStats,
    pub orders_included: u64,
    /// True when every interval ran and every invariant held.
    pub passed: bool,
}

impl SimReport {
    pub fn invariant(&self, name: &str) -> Option<&InvariantResult> {
        self.invariants.iter().find(|i| i.name == name)
    }

    pub fn coverage(&self) -> Vec<f64> {
        self.intervals.iter().map(|r| r.local_coverage).collect()
    }
}

pub(super) struct ReportInput<'a> {
    pub scenario: &'a Scenario,
    pub options: &'a SimOptions,
    pub genesis: &'a Genesis,
    pub profiles: &'a [HouseholdProfile],
    pub households: &'a [HouseholdRecord],
    pub chain: &'a ChainStore,
    pub nodes: &'a [SimNode],
    pub submitted: &'a BTreeMap<Hash, (usize, u64)>,
    pub agents: &'a AgentStats,
    pub logical_ms: u64,
    pub events_processed: u64,
    pub stop_reason: StopReason,
}

pub(super) fn build(input: ReportInput<'_>) -> SimReport {
    let chain = input.chain;
    let state = chain.state();
    let tariff = state.tariff();
    let wanted = input.options.intervals;
    let cleared: Vec<_> = state.clearing_history.iter().take(wanted as usize).collect();

    let mut market: Vec<InvariantResult> = ALL_CHECKS.iter().map(|n| InvariantResult::new(n)).collect();
    let mut coverage = InvariantResult::new("coverage_bounds");
    let mut intervals = Vec::with_capacity(cleared.len());
    for r in &cleared {
        let violations = check_clearing(r, tariff);
        for inv in &mut market {
            inv.checked += 1;
            let name = inv.name.clone();
            for v in violations.iter().filter(|v| v.invariant == name) {
                inv.fail(format!("interval {}: {}", r.interval_id, v.detail));
            }
        }
        let cov = local_coverage(r);
        coverage.check(cov.is_finite() && (0.0..=1.0).contains(&cov), || {
            format!("interval {}: coverage {cov}", r.interval_id)
        });
        intervals.push(IntervalRow {
            interval_id: r.interval_id,
            start_utc: format_timestamp(r.interval_id * state.params.interval_seconds),
            buy_orders: r.book.buys.len() as u64,
            sell_orders: r.book.sells.len() as u64,
            demand_wh: r.book.demand_wh(),
            supply_wh: r.book.supply_wh(),
            local_volume_wh: r.local_volume_wh(),
            trades: r.trades.len() as u64,
            utility_sales_wh: r.utility_sales.iter().map(|s| s.energy_wh).sum(),
            utility_purchases_wh: r.utility_purchases.iter().map(|s| s.energy_wh).sum(),
            local_coverage: cov,
            mean_local_price_mct: r.mean_local_price_mct(),
            violations: violations.len() as u64,
        });
    }

    let mut invariants = market;
    invariants.push(coverage);
    invariants.extend(replay_checks(input.genesis, chain));
    invariants.push(replica_agreement(input.nodes));
    invariants.push(order_accounting(chain));
    invariants.push(kpi_identity(input.households, input.profiles, chain, wanted));

    let mut balances: Vec<BalanceRow> = input
        .households
        .iter()
        .map(|h| BalanceRow {
            party: h.id.clone(),
            address: Some(h.address),
            balance_uct: state.balance_of(&Party::Account(h.address)),
        })
        .collect();
    balances.push(BalanceRow {
        party: "utility".into(),
        address: None,
        balance_uct: state.utility_balance_uct,
    });
    balances.push(BalanceRow {
        party: "grid_operator".into(),
        address: None,
        balance_uct: state.grid_operator_balance_uct,
    });

    let included: BTreeSet<Hash> = chain
        .blocks()
        .iter()
        .flat_map(|b| b.transactions.iter().map(|t| t.hash()))
        .collect();
    let orders_included = input.submitted.keys().filter(|h| included.contains(h)).count() as u64;

    let nodes: Vec<NodeSummary> = input
        .nodes
        .iter()
        .map(|n| {
            let stats = n.node.stats();
            NodeSummary {
                name: n.name.clone(),
                role: if n.node.is_validator() {
                    NodeRole::Validator
                } else {
                    NodeRole::Light
                },
                status: if n.crashed {
                    NodeStatus::Crashed
                } else if n.equivocator {
                    NodeStatus::Equivocator
                } else {
                    NodeStatus::Honest
                },
                height: n.node.chain().tip_height(),
                max_commit_round: n.commits.iter().map(|c| c.3).max().unwrap_or(0),
                rounds_started: stats.rounds_started,
                dropped_invalid: stats.dropped_invalid,
                equivocations_seen: stats.equivocations,
            }
        })
        .collect();
    let max_commit_round = nodes
        .iter()
        .filter(|n| n.status == NodeStatus::Honest)
        .map(|n| n.max_commit_round)
        .max()
        .unwrap_or(0);

    let intervals_cleared = cleared.len() as u64;
    let completed = intervals_cleared == wanted;
    let passed = completed && invariants.iter().all(InvariantResult::passed);
    let s = input.scenario;
    SimReport {
        scenario: s.name.clone(),
        seed: input.options.seed,
        households: s.households.len(),
        prosumers: s.households.iter().filter(|h| h.kind == HouseholdKind::Prosumer).count(),
        pv_kwp_total: s.households.iter().map(|h| h.pv_kwp).sum(),
        battery_kwh_total: s.households.iter().map(|h| h.battery_kwh).sum(),
        intervals_requested: wanted,
        intervals_cleared,
        completed,
        genesis_hash: input.genesis.hash(),
        final_height: chain.tip_height(),
        final_state_hash: state.state_hash(),
        intervals,
        balances,
        invariants,
        consensus: ConsensusSummary {
            validators: input.genesis.validators.len(),
            heights_committed: chain.tip_height(),
            max_commit_round,
            logical_ms: input.logical_ms,
            events_processed: input.events_processed,
            stop_reason: input.stop_reason.clone(),
            nodes,
        },
        agents: input.agents.clone(),
        orders_included,
        passed,
    }
}

/// Replay the chain from genesis with an uncached verifier and check money
/// and nonces block by block.
fn replay_checks(genesis: &Genesis, chain: &ChainStore) -> [InvariantResult; 3] {
    let mut replay = InvariantResult::new("independent_replay");
    let mut conservation = InvariantResult::new("balance_conservation");
    let mut nonces = InvariantResult::new("nonce_monotonicity");
    let mut state = AppState::from_genesis(genesis);
    let mut last_nonce: BTreeMap<Address, u64> = BTreeMap::new();
    for block in chain.blocks() {
        for tx in &block.transactions {
            let prev = last_nonce.insert(tx.sender_address, tx.nonce).unwrap_or(0);
            nonces.check(tx.nonce == prev + 1, || {
                format!("height {}: nonce {} after {prev}", block.height, tx.nonce)
            });
        }
        match state.apply_block(block, &DirectVerifier) {
            Ok(next) => {
                replay.check(true, String::new);
                state = next;
            }
            Err(e) => {
                replay.fail(format!("height {}: {e}", block.height));
                return [replay, conservation, nonces];
            }
        }
        let total = state.total_balance_uct();
        conservation.check(total == 0, || format!("height {}: balances sum to {total}", block.height));
    }
    replay.check(state.state_hash() == chain.state().state_hash(), || {
        "final state hash differs from the replica's".into()
    });
    [replay, conservation, nonces]
}

/// Honest replicas that reached a height committed the same block and state.
fn replica_agreement(nodes: &[SimNode]) -> InvariantResult {
    let mut inv = InvariantResult::new("replica_agreement");
    let mut seen: BTreeMap<u64, (Hash, Hash, &str)> = BTreeMap::new();
    for n in nodes.iter().filter(|n| n.honest()) {
        for &(height, block, state, _) in &n.commits {
            match seen.get(&height) {
                None => {
                    seen.insert(height, (block, state, &n.name));
                }
                Some(&(b, s, first)) => inv.check(b == block && s == state, || {
                    format!("height {height}: {} disagrees with {first}", n.name)
                }),
            }
        }
    }
    inv
}

/// Every included order reaches exactly one cleared book, and every book
/// entry came from an included transaction.
fn order_accounting(chain: &ChainStore) -> InvariantResult {
    let mut inv = InvariantResult::new("order_accounting");
    let state = chain.state();
    let mut included: BTreeMap<(u64, Address), u64> = BTreeMap::new();
    for block in chain.blocks() {
        for tx in &block.transactions {
            *included.entry((tx.order().interval_id, tx.sender_address)).or_default() += 1;
        }
    }
    let last_cleared = state.clearing_history.last().map(|r| r.interval_id);
    for (&(interval, account), &count) in &included {
        if last_cleared.is_none_or(|l| interval > l) {
            continue;
        }
        let in_book = state
            .clearing(interval)
            .map_or(0, |r| r.book.orders().filter(|o| o.account == account).count());
        inv.check(count == 1 && in_book == 1, || {
            format!("interval {interval}: {account} included {count}x, booked {in_book}x")
        });
    }
    for r in &state.clearing_history {
        for o in r.book.orders() {
            inv.check(included.contains_key(&(r.interval_id, o.account)), || {
                format!("interval {}: order of {} has no transaction", r.interval_id, o.account)
            });
        }
    }
    inv
}

/// Energy identities per household over the run, plus agreement between
/// reading-derived grid flows and the utility residuals wherever the
/// household's order was booked.
fn kpi_identity(
    households: &[HouseholdRecord],
    profiles: &[HouseholdProfile],
    chain: &ChainStore,
    wanted: u64,
) -> InvariantResult {
    let mut inv = InvariantResult::new("kpi_identity");
    let state = chain.state();
    let cleared = &state.clearing_history[..state.clearing_history.len().min(wanted as usize)];
    if cleared.is_empty() {
        return inv;
    }
    for (h, profile) in households.iter().zip(profiles) {
        let report = match compute_kpis(&h.address, profile, cleared) {
            Ok(r) => r,
            Err(e) => {
                inv.fail(format!("{}: {e}", h.id));
                continue;
            }
        };
        inv.check(
            report.self_consumed_wh + report.locally_sold_wh + report.grid_sold_wh == report.produced_wh,
            || format!("{}: production does not add up", h.id),
        );
        inv.check(
            report.self_supplied_wh + report.locally_bought_wh + report.grid_bought_wh == report.consumed_wh,
            || format!("{}: consumption does not add up", h.id),
        );
        let ratios_ok = [report.self_consumption_ratio, report.self_sufficiency_ratio]
            .iter()
            .all(|r| (0.0..=1.0).contains(r));
        inv.check(ratios_ok, || format!("{}: ratio outside [0, 1]", h.id));

        for r in cleared {
            let Some(order) = r.book.orders().find(|o| o.account == h.address) else { continue };
            let Some(reading) = profile.reading(r.interval_id) else { continue };
            let expected = match net_position(reading) {
                NetPosition::Buy(e) | NetPosition::Sell(e) => e,
                NetPosition::Balanced => 0,
            };
            let traded: u64 = r
                .trades
                .iter()
                .filter(|t| t.buyer == h.address || t.seller == h.address)
                .map(|t| t.energy_wh)
                .sum();
            let residual: u64 = r
                .utility_sales
                .iter()
                .chain(&r.utility_purchases)
                .filter(|x| x.account == h.address)
                .map(|x| x.energy_wh)
                .sum();
            inv.check(order.energy_wh == expected && traded + residual == expected, || {
                format!(
                    "{} interval {}: metered {expected} Wh, ordered {}, traded {traded} + utility {residual}",
                    h.id, r.interval_id, order.energy_wh
                )
            });
        }
    }
    inv
}
