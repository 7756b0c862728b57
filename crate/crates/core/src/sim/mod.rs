//! Deterministic discrete-event simulation of a community: every household
//! runs a node and a bidding agent, all on one logical clock. Message
//! delays, drops and partitions come from a seeded generator, so a scenario
//! and seed fix every byte of the outcome.

mod report;
mod scenario;

pub use report::{
    BalanceRow, ConsensusSummary, IntervalRow, InvariantResult, NodeRole, NodeStatus, NodeSummary, SimReport,
};
pub use scenario::{
    FaultConfig, HouseholdConfig, NetworkConfig, Partition, Scenario, ScenarioError, UTILITY_NODE,
};

use std::cmp::Ordering;
use std::collections::{BTreeMap, BinaryHeap};
use std::path::Path;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::agent::{compose_order, PricePreferences};
use crate::consensus::{CommitCertificate, ConsensusMessage, MessageKind, TimeoutEvent, VoteTarget, WireMessage};
use crate::explorer::ChainStore;
use crate::identity::{Address, CachedVerifier, Hash, KeyPair, PublicKey, SignatureVerifier};
use crate::ledger::{log, Block, Genesis};
use crate::metering::synthetic::{generate, SyntheticConfig};
use crate::metering::{load_profiles, write_profiles, HouseholdKind, HouseholdProfile, MeteringError};
use crate::node::{Node, NodeConfig, NodeEvent, NodeOutput, Outbound, TimestampPolicy};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SimOptions {
    /// Clearing intervals to run, starting at genesis.
    pub intervals: u64,
    pub seed: u64,
    /// Logical time budget; derived from the scenario when `None`.
    pub max_logical_ms: Option<u64>,
}

impl SimOptions {
    pub fn new(intervals: u64, seed: u64) -> Self {
        Self {
            intervals,
            seed,
            max_logical_ms: None,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum SimError {
    #[error("scenario: {0}")]
    Scenario(#[from] ScenarioError),
    #[error("profiles: {0}")]
    Metering(#[from] MeteringError),
    #[error("profiles: {0}")]
    Profiles(String),
    #[error("{0}")]
    Io(String),
}

/// What the household agents did.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct AgentStats {
    pub orders_submitted: u64,
    pub balanced_intervals: u64,
    pub submit_errors: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    Completed,
    QueueEmpty,
    TimeBudget,
}

/// Public identity of a simulated household, written next to the chain so
/// the explorer can map profiles to accounts.
#[derive(Debug, Clone, PartialEq, Serialize, serde::Deserialize)]
pub struct HouseholdRecord {
    pub id: String,
    pub kind: HouseholdKind,
    pub address: Address,
    pub pubkey: PublicKey,
    pub pv_kwp: f64,
    pub battery_kwh: f64,
    pub validator: bool,
}

struct SimNode {
    name: String,
    node: Node,
    household: Option<usize>,
    crashed: bool,
    equivocator: bool,
    key: KeyPair,
    /// Certificates this node broadcast, by height - 1.
    certs: Vec<CommitCertificate>,
    /// Conflicting blocks an equivocator built for its own proposals.
    alt_blocks: BTreeMap<(u64, u32), Block>,
    commits: Vec<(u64, Hash, Hash, u32)>,
}

impl SimNode {
    fn honest(&self) -> bool {
        !self.crashed && !self.equivocator
    }
}

enum EventKind {
    Deliver { from: usize, to: usize, msg: Arc<WireMessage> },
    Timeout { node: usize, ev: TimeoutEvent },
}

struct Event {
    time: u64,
    seq: u64,
    kind: EventKind,
}

impl PartialEq for Event {
    fn eq(&self, other: &Self) -> bool {
        (self.time, self.seq) == (other.time, other.seq)
    }
}
impl Eq for Event {}
impl PartialOrd for Event {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Event {
    // Reversed: BinaryHeap pops the earliest event first.
    fn cmp(&self, other: &Self) -> Ordering {
        (other.time, other.seq).cmp(&(self.time, self.seq))
    }
}

struct Agent {
    prefs: PricePreferences,
    profile: usize,
}

struct Simulator<'a> {
    scenario: &'a Scenario,
    start_interval: u64,
    end_interval: u64,
    nodes: Vec<SimNode>,
    validators: Vec<usize>,
    agents: BTreeMap<usize, Agent>,
    profiles: &'a [HouseholdProfile],
    queue: BinaryHeap<Event>,
    rng: ChaCha8Rng,
    seq: u64,
    now: u64,
    /// Transactions the agents sent, by hash: (household index, interval).
    submitted: BTreeMap<Hash, (usize, u64)>,
    agent_stats: AgentStats,
    events_processed: u64,
}

/// Everything a run produced.
pub struct SimOutcome {
    pub scenario: Scenario,
    pub options: SimOptions,
    pub genesis: Genesis,
    pub profiles: Vec<HouseholdProfile>,
    pub households: Vec<HouseholdRecord>,
    /// Chain of the most advanced honest replica.
    pub chain: ChainStore,
    pub report: SimReport,
}

impl SimOutcome {
    pub fn passed(&self) -> bool {
        self.report.passed
    }

    pub fn report_json(&self) -> String {
        serde_json::to_string_pretty(&self.report).expect("report serializes") + "\n"
    }

    pub fn intervals_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        for row in &self.report.intervals {
            w.serialize(row).expect("row serializes");
        }
        String::from_utf8(w.into_inner().expect("in-memory writer")).expect("csv is utf-8")
    }

    /// Write report.json, intervals.csv, chain.log, genesis.json,
    /// profiles.csv and households.json into `dir`.
    pub fn write_to(&self, dir: &Path) -> Result<(), SimError> {
        let io = |e: std::io::Error| SimError::Io(format!("{}: {e}", dir.display()));
        std::fs::create_dir_all(dir).map_err(io)?;
        std::fs::write(dir.join("report.json"), self.report_json()).map_err(io)?;
        std::fs::write(dir.join("intervals.csv"), self.intervals_csv()).map_err(io)?;
        log::write_all(&dir.join("chain.log"), self.chain.blocks()).map_err(|e| SimError::Io(e.to_string()))?;
        self.genesis.save(&dir.join("genesis.json")).map_err(|e| SimError::Io(e.to_string()))?;
        let mut csv_bytes = Vec::new();
        write_profiles(&mut csv_bytes, &self.profiles, self.genesis.interval_seconds)?;
        std::fs::write(dir.join("profiles.csv"), csv_bytes).map_err(io)?;
        let households = serde_json::to_string_pretty(&self.households).expect("households serialize") + "\n";
        std::fs::write(dir.join("households.json"), households).map_err(io)?;
        Ok(())
    }
}

fn household_profiles(scenario: &Scenario, start: u64, intervals: u64, seed: u64) -> Result<Vec<HouseholdProfile>, SimError> {
    let specs: Vec<_> = scenario.households.iter().map(HouseholdConfig::spec).collect();
    let Some(path) = &scenario.profiles_csv else {
        let cfg = SyntheticConfig::new(start, intervals, scenario.interval_seconds, seed);
        return Ok(generate(&specs, &cfg));
    };
    let mut loaded: BTreeMap<String, HouseholdProfile> = load_profiles(path, scenario.interval_seconds)?
        .into_iter()
        .map(|p| (p.household_id.clone(), p))
        .collect();
    let end = start + intervals.max(1) - 1;
    let mut out = Vec::with_capacity(specs.len());
    for h in &scenario.households {
        let mut p = loaded
            .remove(&h.id)
            .ok_or_else(|| SimError::Profiles(format!("{}: no readings for household {:?}", path.display(), h.id)))?;
        match p.interval_range() {
            Some((first, last)) if first <= start && last >= end => {}
            _ => {
                return Err(SimError::Profiles(format!(
                    "{}: household {:?} lacks readings for intervals {start}..={end}",
                    path.display(),
                    h.id
                )))
            }
        }
        if h.kind == HouseholdKind::Consumer && p.readings.iter().any(|r| r.production_wh != 0 || r.battery_wh != 0) {
            return Err(SimError::Profiles(format!(
                "{}: consumer {:?} has production or battery readings",
                path.display(),
                h.id
            )));
        }
        p.readings.retain(|r| r.interval_id >= start && r.interval_id <= end);
        p.kind = h.kind;
        p.pv_kwp = h.pv_kwp;
        p.battery_kwh = h.battery_kwh;
        out.push(p);
    }
    if let Some(extra) = loaded.keys().next() {
        return Err(SimError::Profiles(format!("{}: household {extra:?} is not in the scenario", path.display())));
    }
    Ok(out)
}

fn default_budget_ms(scenario: &Scenario, intervals: u64) -> u64 {
    let blocks = (intervals * scenario.interval_seconds).div_ceil(scenario.block_seconds) + 1;
    let c = &scenario.consensus;
    let slack = 3 * (c.timeout_propose_ms + c.timeout_prevote_ms + c.timeout_precommit_ms + 4 * scenario.network.max_delay_ms);
    blocks * (c.block_interval_ms + slack) + 60_000
}

/// Run `scenario` for `options.intervals` intervals.
pub fn run_scenario(scenario: &Scenario, options: &SimOptions) -> Result<SimOutcome, SimError> {
    scenario.validate()?;
    let genesis = scenario.genesis();
    let start_interval = genesis.genesis_time / genesis.interval_seconds;
    let profiles = household_profiles(scenario, start_interval, options.intervals, options.seed)?;
    let verifier: Arc<dyn SignatureVerifier> = Arc::new(CachedVerifier::new());
    let config = NodeConfig {
        consensus: scenario.consensus,
        timestamps: TimestampPolicy::Logical {
            block_seconds: scenario.block_seconds,
        },
        relay_txs: false,
        ..NodeConfig::default()
    };

    let validator_names = scenario.validator_names();
    let mut nodes = Vec::new();
    let mut agents = BTreeMap::new();
    for name in scenario.node_names() {
        let key = scenario.node_key(&name);
        let household = scenario.households.iter().position(|h| h.id == name);
        let is_validator = validator_names.contains(&name);
        let node = Node::new(genesis.clone(), is_validator.then(|| key.clone()), config, verifier.clone());
        if let Some(hi) = household {
            let h = &scenario.households[hi];
            let t = &scenario.tariff;
            let prefs = if h.max_buy_mct.is_none() && h.min_sell_mct.is_none() {
                PricePreferences::passive(key.address(), h.kind, t, 0)
            } else {
                let sell = (h.kind == HouseholdKind::Prosumer).then(|| h.min_sell_mct.unwrap_or(t.floor()));
                PricePreferences::clamped(key.address(), h.max_buy_mct.unwrap_or(t.ceiling()), sell, t, 0)
            };
            agents.insert(nodes.len(), Agent { prefs, profile: hi });
        }
        nodes.push(SimNode {
            crashed: scenario.faults.crashed.contains(&name),
            equivocator: scenario.faults.equivocators.contains(&name),
            name,
            node,
            household,
            key,
            certs: Vec::new(),
            alt_blocks: BTreeMap::new(),
            commits: Vec::new(),
        });
    }
    let validators = (0..nodes.len()).filter(|&i| nodes[i].node.is_validator()).collect();

    let mut sim = Simulator {
        scenario,
        start_interval,
        end_interval: start_interval + options.intervals,
        nodes,
        validators,
        agents,
        profiles: &profiles,
        queue: BinaryHeap::new(),
        rng: ChaCha8Rng::seed_from_u64(options.seed),
        seq: 0,
        now: 0,
        submitted: BTreeMap::new(),
        agent_stats: AgentStats::default(),
        events_processed: 0,
    };
    let budget = options
        .max_logical_ms
        .unwrap_or_else(|| default_budget_ms(scenario, options.intervals));
    let stop_reason = sim.run(budget, options.intervals);

    let households = scenario
        .households
        .iter()
        .map(|h| {
            let k = h.keypair();
            HouseholdRecord {
                id: h.id.clone(),
                kind: h.kind,
                address: k.address(),
                pubkey: k.public_key(),
                pv_kwp: h.pv_kwp,
                battery_kwh: h.battery_kwh,
                validator: validator_names.contains(&h.id),
            }
        })
        .collect::<Vec<_>>();

    let mut reference: Option<&SimNode> = None;
    for n in sim.nodes.iter().filter(|n| n.honest()) {
        if reference.is_none_or(|r| n.node.chain().tip_height() > r.node.chain().tip_height()) {
            reference = Some(n);
        }
    }
    let reference = reference.map_or_else(|| ChainStore::new(genesis.clone()), |n| n.node.chain().clone());

    let report = report::build(report::ReportInput {
        scenario,
        options,
        genesis: &genesis,
        profiles: &profiles,
        households: &households,
        chain: &reference,
        nodes: &sim.nodes,
        submitted: &sim.submitted,
        agents: &sim.agent_stats,
        logical_ms: sim.now,
        events_processed: sim.events_processed,
        stop_reason,
    });

    Ok(SimOutcome {
        scenario: scenario.clone(),
        options: *options,
        genesis,
        profiles,
        households,
        chain: reference,
        report,
    })
}

impl Simulator<'_> {
    fn run(&mut self, budget_ms: u64, intervals: u64) -> StopReason {
        for i in 0..self.nodes.len() {
            if !self.nodes[i].crashed {
                let out = self.nodes[i].node.start(0);
                self.process(i, out);
            }
        }
        loop {
            if self.done(intervals) {
                return StopReason::Completed;
            }
            let Some(ev) = self.queue.pop() else {
                return StopReason::QueueEmpty;
            };
            if ev.time > budget_ms {
                return StopReason::TimeBudget;
            }
            self.now = ev.time;
            self.events_processed += 1;
            match ev.kind {
                EventKind::Deliver { from, to, msg } => self.deliver(from, to, &msg),
                EventKind::Timeout { node, ev } => {
                    let out = self.nodes[node].node.timeout(ev, self.now);
                    self.process(node, out);
                }
            }
        }
    }

    fn done(&self, intervals: u64) -> bool {
        self.nodes
            .iter()
            .filter(|n| n.honest())
            .all(|n| n.node.state().clearing_history.len() as u64 >= intervals)
    }

    fn deliver(&mut self, from: usize, to: usize, msg: &WireMessage) {
        // Block sync: a replica shown a certificate beyond its next height
        // first receives the sender's certificates for the gap.
        if let WireMessage::Commit(c) = msg {
            let have = self.nodes[to].node.chain().tip_height();
            if c.height() > have + 1 {
                let missing: Vec<CommitCertificate> = self.nodes[from]
                    .certs
                    .iter()
                    .filter(|m| m.height() > have && m.height() < c.height())
                    .cloned()
                    .collect();
                for cert in missing {
                    let out = self.nodes[to].node.handle(&WireMessage::Commit(cert), self.now);
                    self.process(to, out);
                }
            }
        }
        let out = self.nodes[to].node.handle(msg, self.now);
        self.process(to, out);
    }

    fn partitioned(&self, a: usize, b: usize) -> bool {
        let (na, nb) = (&self.nodes[a].name, &self.nodes[b].name);
        self.scenario.network.partitions.iter().any(|p| {
            if self.now < p.from_ms || self.now >= p.to_ms {
                return false;
            }
            let group = |n: &String| p.groups.iter().position(|g| g.contains(n));
            group(na) != group(nb)
        })
    }

    fn send(&mut self, from: usize, to: usize, msg: Arc<WireMessage>) {
        if self.nodes[to].crashed || self.partitioned(from, to) {
            return;
        }
        let net = &self.scenario.network;
        if net.drop_probability > 0.0 && self.rng.random_bool(net.drop_probability) {
            return;
        }
        let delay = self.rng.random_range(net.min_delay_ms..=net.max_delay_ms);
        self.seq += 1;
        self.queue.push(Event {
            time: self.now + delay,
            seq: self.seq,
            kind: EventKind::Deliver { from, to, msg },
        });
    }

    fn process(&mut self, from: usize, out: NodeOutput) {
        for ob in out.send {
            let (recipients, msg): (Vec<usize>, WireMessage) = match ob {
                Outbound::Validators(m) => (self.validators.iter().copied().filter(|&v| v != from).collect(), m),
                Outbound::Everyone(m) => ((0..self.nodes.len()).filter(|&v| v != from).collect(), m),
            };
            if let WireMessage::Commit(c) = &msg {
                let certs = &mut self.nodes[from].certs;
                if c.height() == certs.len() as u64 + 1 {
                    certs.push(c.clone());
                }
            }
            match msg {
                WireMessage::Consensus(m) if self.nodes[from].equivocator => self.equivocate(from, m, &recipients),
                msg => {
                    let msg = Arc::new(msg);
                    for to in recipients {
                        self.send(from, to, msg.clone());
                    }
                }
            }
        }
        for (ev, delay) in out.timeouts {
            self.seq += 1;
            self.queue.push(Event {
                time: self.now + delay,
                seq: self.seq,
                kind: EventKind::Timeout { node: from, ev },
            });
        }
        for ev in out.events {
            match ev {
                NodeEvent::Committed {
                    height,
                    block_hash,
                    state_hash,
                    round,
                } => self.nodes[from].commits.push((height, block_hash, state_hash, round)),
                NodeEvent::IntervalOpened { interval_id } => self.agent_bid(from, interval_id),
            }
        }
    }

    /// Even-ranked recipients get the real message, odd-ranked ones a
    /// conflicting version, and the first recipient gets both.
    fn equivocate(&mut self, from: usize, m: ConsensusMessage, recipients: &[usize]) {
        let conflicting = self.conflicting(from, &m);
        let original = Arc::new(WireMessage::Consensus(m));
        let Some(conflicting) = conflicting.map(|c| Arc::new(WireMessage::Consensus(c))) else {
            for &to in recipients {
                self.send(from, to, original.clone());
            }
            return;
        };
        for (rank, &to) in recipients.iter().enumerate() {
            if rank % 2 == 0 {
                self.send(from, to, original.clone());
            }
            if rank % 2 == 1 || rank == 0 {
                self.send(from, to, conflicting.clone());
            }
        }
    }

    fn conflicting(&mut self, from: usize, m: &ConsensusMessage) -> Option<ConsensusMessage> {
        let slot = (m.height, m.round);
        let n = &mut self.nodes[from];
        match m.kind {
            MessageKind::Proposal => {
                let alt = n.node.alternative_block(m.block.as_ref()?)?;
                let hash = alt.hash();
                n.alt_blocks.insert(slot, alt.clone());
                Some(ConsensusMessage::new_signed(
                    &n.key,
                    MessageKind::Proposal,
                    m.height,
                    m.round,
                    VoteTarget::Block(hash),
                    Some(alt),
                ))
            }
            MessageKind::Prevote | MessageKind::Precommit => {
                let VoteTarget::Block(voted) = m.block_hash else { return None };
                let target = match n.alt_blocks.get(&slot).map(Block::hash) {
                    Some(alt) if alt != voted => VoteTarget::Block(alt),
                    _ => VoteTarget::Nil,
                };
                Some(ConsensusMessage::new_signed(&n.key, m.kind, m.height, m.round, target, None))
            }
        }
    }

    fn agent_bid(&mut self, node: usize, interval_id: u64) {
        if interval_id < self.start_interval || interval_id >= self.end_interval {
            return;
        }
        let Some(agent) = self.agents.get(&node) else { return };
        let n = &self.nodes[node];
        let profile = &self.profiles[agent.profile];
        let Some(reading) = profile.reading(interval_id) else {
            self.agent_stats
                .submit_errors
                .push(format!("{}: no reading for interval {interval_id}", n.name));
            return;
        };
        let nonce = n.node.state().nonce_of(&agent.prefs.account) + 1;
        let tx = match compose_order(&agent.prefs, reading, interval_id, nonce, &n.key) {
            Ok(Some(tx)) => tx,
            Ok(None) => {
                self.agent_stats.balanced_intervals += 1;
                return;
            }
            Err(e) => {
                self.agent_stats
                    .submit_errors
                    .push(format!("{} interval {interval_id}: {e}", n.name));
                return;
            }
        };
        let hash = tx.hash();
        let household = n.household.expect("agents belong to households");
        match self.nodes[node].node.submit(tx) {
            Ok(out) => {
                self.agent_stats.orders_submitted += 1;
                self.submitted.insert(hash, (household, interval_id));
                self.process(node, out);
            }
            Err(e) => self.agent_stats.submit_errors.push(format!(
                "{} interval {interval_id}: {}",
                self.nodes[node].name,
                e.code()
            )),
        }
    }
}

