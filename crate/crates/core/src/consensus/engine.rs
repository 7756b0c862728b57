//! Simplified Tendermint round state machine.
//!
//! Per height: the round's proposer broadcasts a block; validators prevote it
//! (their locked block if locked, nil if invalid or on timeout); a prevote
//! quorum for a block locks it and triggers a precommit; a precommit quorum
//! commits. Failed rounds advance with growing timeouts. A lock moves only
//! when a later round shows a prevote quorum for another block. Proof of
//! lock change is not carried in proposals.
//!
//! The engine is sans-IO: inputs are messages, timeouts and commit
//! certificates; outputs are messages to broadcast and timeouts to schedule.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{CommitCertificate, ConsensusMessage, MessageKind, ValidatorSet, VoteTarget};
use crate::identity::{Address, Hash, KeyPair, SignatureVerifier};
use crate::ledger::Block;

/// How far ahead of the current height messages are buffered.
const FUTURE_HEIGHTS: u64 = 2;
const MAX_PENDING_CERTS: usize = 1024;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConsensusConfig {
    pub timeout_propose_ms: u64,
    pub timeout_prevote_ms: u64,
    pub timeout_precommit_ms: u64,
    /// Added per round to every timeout.
    pub timeout_delta_ms: u64,
    /// Pause between a commit and the next height's first round.
    pub block_interval_ms: u64,
}

impl Default for ConsensusConfig {
    fn default() -> Self {
        Self {
            timeout_propose_ms: 1000,
            timeout_prevote_ms: 500,
            timeout_precommit_ms: 500,
            timeout_delta_ms: 250,
            block_interval_ms: 5000,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Step {
    NewHeight,
    Propose,
    Prevote,
    Precommit,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct TimeoutEvent {
    pub height: u64,
    pub round: u32,
    pub step: Step,
}

#[derive(Debug, Clone)]
pub enum Input {
    Message(ConsensusMessage),
    Timeout(TimeoutEvent),
    Commit(CommitCertificate),
}

#[derive(Debug, Default)]
pub struct Output {
    pub messages: Vec<ConsensusMessage>,
    pub timeouts: Vec<(TimeoutEvent, u64)>,
    pub commits: Vec<CommitCertificate>,
}

/// What the engine needs from the replicated application.
pub trait Application {
    fn create_proposal(&mut self, height: u64, round: u32, proposer: Address) -> Option<Block>;
    fn validate_block(&mut self, block: &Block) -> bool;
    fn commit(&mut self, cert: &CommitCertificate);
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RoundState {
    pub height: u64,
    pub round: u32,
    pub step: Step,
    pub locked: Option<(Hash, u32)>,
}

#[derive(Debug, Default, Clone, Copy, PartialEq, Eq)]
pub struct EngineStats {
    /// Messages from non-validators, with bad signatures, or malformed.
    pub dropped_invalid: u64,
    /// Conflicting proposals or votes from one sender for one slot.
    pub equivocations: u64,
    pub rounds_started: u64,
}

type VoteMap = BTreeMap<u32, BTreeMap<Address, ConsensusMessage>>;

pub struct ConsensusEngine {
    set: ValidatorSet,
    key: Option<KeyPair>,
    config: ConsensusConfig,
    verifier: Arc<dyn SignatureVerifier>,
    state: RoundState,
    locked_block: Option<Block>,
    proposals: BTreeMap<u32, ConsensusMessage>,
    prevotes: VoteMap,
    precommits: VoteMap,
    blocks: BTreeMap<Hash, Block>,
    validity: BTreeMap<Hash, bool>,
    scheduled: BTreeSet<TimeoutEvent>,
    future: BTreeMap<u64, Vec<ConsensusMessage>>,
    pending_certs: BTreeMap<u64, CommitCertificate>,
    stats: EngineStats,
}

impl ConsensusEngine {
    /// `key` is `None` for light nodes, which follow commits but never vote.
    pub fn new(
        set: ValidatorSet,
        key: Option<KeyPair>,
        config: ConsensusConfig,
        start_height: u64,
        verifier: Arc<dyn SignatureVerifier>,
    ) -> Self {
        let key = key.filter(|k| set.contains(&k.address()));
        Self {
            set,
            key,
            config,
            verifier,
            state: RoundState {
                height: start_height,
                round: 0,
                step: Step::NewHeight,
                locked: None,
            },
            locked_block: None,
            proposals: BTreeMap::new(),
            prevotes: BTreeMap::new(),
            precommits: BTreeMap::new(),
            blocks: BTreeMap::new(),
            validity: BTreeMap::new(),
            scheduled: BTreeSet::new(),
            future: BTreeMap::new(),
            pending_certs: BTreeMap::new(),
            stats: EngineStats::default(),
        }
    }

    pub fn is_validator(&self) -> bool {
        self.key.is_some()
    }

    pub fn round_state(&self) -> &RoundState {
        &self.state
    }

    pub fn height(&self) -> u64 {
        self.state.height
    }

    pub fn stats(&self) -> EngineStats {
        self.stats
    }

    pub fn validator_set(&self) -> &ValidatorSet {
        &self.set
    }

    /// Begin the start height.
    pub fn start(&mut self, app: &mut dyn Application) -> Output {
        let mut out = Output::default();
        let h = self.state.height;
        self.enter_new_height(h, app, &mut out);
        out
    }

    pub fn handle(&mut self, input: Input, app: &mut dyn Application) -> Output {
        let mut out = Output::default();
        match input {
            Input::Message(m) => self.on_message(m, app, &mut out),
            Input::Timeout(t) => self.on_timeout(t, app, &mut out),
            Input::Commit(c) => self.on_commit_cert(c, app, &mut out),
        }
        out
    }

    fn timeout_for(&self, step: Step, round: u32) -> u64 {
        let c = &self.config;
        let base = match step {
            Step::NewHeight => return c.block_interval_ms,
            Step::Propose => c.timeout_propose_ms,
            Step::Prevote => c.timeout_prevote_ms,
            Step::Precommit => c.timeout_precommit_ms,
        };
        base + c.timeout_delta_ms * round as u64
    }

    fn schedule(&mut self, step: Step, round: u32, out: &mut Output) {
        if !self.is_validator() {
            return;
        }
        let ev = TimeoutEvent {
            height: self.state.height,
            round,
            step,
        };
        if self.scheduled.insert(ev) {
            out.timeouts.push((ev, self.timeout_for(step, round)));
        }
    }

    /// Every step is bounded by its own timeout, quorum or not, so a round
    /// whose votes were lost still ends and the next one is tried.
    fn step_to(&mut self, step: Step, out: &mut Output) {
        self.state.step = step;
        self.schedule(step, self.state.round, out);
    }

    fn enter_new_height(&mut self, height: u64, app: &mut dyn Application, out: &mut Output) {
        self.state = RoundState {
            height,
            round: 0,
            step: Step::NewHeight,
            locked: None,
        };
        self.locked_block = None;
        self.proposals.clear();
        self.prevotes.clear();
        self.precommits.clear();
        self.blocks.clear();
        self.validity.clear();
        self.scheduled.retain(|t| t.height >= height);
        self.future.retain(|h, _| *h >= height);
        self.pending_certs.retain(|h, _| *h >= height);
        self.schedule(Step::NewHeight, 0, out);

        if let Some(cert) = self.pending_certs.remove(&height) {
            self.on_commit_cert(cert, app, out);
            return;
        }
        for m in self.future.remove(&height).unwrap_or_default() {
            self.on_message(m, app, out);
            if self.state.height != height {
                return;
            }
        }
    }

    fn enter_round(&mut self, round: u32, app: &mut dyn Application, out: &mut Output) {
        self.state.round = round;
        self.state.step = Step::Propose;
        self.stats.rounds_started += 1;
        self.schedule(Step::Propose, round, out);

        let Some(key) = self.key.clone() else { return };
        let height = self.state.height;
        let Ok(proposer) = self.set.proposer_for(height, round) else { return };
        if proposer.address != key.address() || self.proposals.contains_key(&round) {
            return;
        }
        let block = self
            .locked_block
            .clone()
            .or_else(|| app.create_proposal(height, round, key.address()));
        if let Some(block) = block {
            let hash = block.hash();
            let msg = ConsensusMessage::new_signed(
                &key,
                MessageKind::Proposal,
                height,
                round,
                VoteTarget::Block(hash),
                Some(block.clone()),
            );
            self.blocks.insert(hash, block);
            self.proposals.insert(round, msg.clone());
            out.messages.push(msg);
        }
    }

    fn on_message(&mut self, m: ConsensusMessage, app: &mut dyn Application, out: &mut Output) {
        let height = self.state.height;
        if m.height < height {
            return;
        }
        if m.height > height {
            if m.height <= height + FUTURE_HEIGHTS {
                self.future.entry(m.height).or_default().push(m);
            }
            return;
        }
        if !m.is_authentic(&self.set, self.verifier.as_ref()) {
            self.stats.dropped_invalid += 1;
            return;
        }
        match m.kind {
            MessageKind::Proposal => {
                let expected = self.set.proposer_for(height, m.round).map(|v| v.address).ok();
                let block = m.block.as_ref().expect("authentic proposal carries a block");
                // A locked block keeps its original proposer when re-proposed.
                if expected != Some(m.sender) || !self.set.contains(&block.proposer) {
                    self.stats.dropped_invalid += 1;
                    return;
                }
                if let Some(existing) = self.proposals.get(&m.round) {
                    if existing.block_hash != m.block_hash {
                        self.stats.equivocations += 1;
                    }
                    return;
                }
                if let VoteTarget::Block(h) = m.block_hash {
                    self.blocks.insert(h, block.clone());
                }
                self.proposals.insert(m.round, m);
            }
            MessageKind::Prevote | MessageKind::Precommit => {
                let map = if m.kind == MessageKind::Prevote {
                    &mut self.prevotes
                } else {
                    &mut self.precommits
                };
                let slot = map.entry(m.round).or_default();
                if let Some(existing) = slot.get(&m.sender) {
                    if existing.block_hash != m.block_hash {
                        self.stats.equivocations += 1;
                    }
                    return;
                }
                slot.insert(m.sender, m);
            }
        }
        self.evaluate(app, out);
    }

    fn on_timeout(&mut self, t: TimeoutEvent, app: &mut dyn Application, out: &mut Output) {
        self.scheduled.remove(&t);
        if t.height != self.state.height {
            return;
        }
        let s = &self.state;
        match t.step {
            Step::NewHeight if s.step == Step::NewHeight => self.enter_round(0, app, out),
            Step::Propose if s.round == t.round && s.step == Step::Propose => {
                self.cast(MessageKind::Prevote, VoteTarget::Nil, out);
                self.step_to(Step::Prevote, out);
            }
            Step::Prevote if s.round == t.round && s.step == Step::Prevote => {
                self.cast(MessageKind::Precommit, VoteTarget::Nil, out);
                self.step_to(Step::Precommit, out);
            }
            Step::Precommit if s.round == t.round && s.step != Step::NewHeight => {
                self.enter_round(t.round + 1, app, out);
            }
            _ => return,
        }
        self.evaluate(app, out);
    }

    fn on_commit_cert(&mut self, cert: CommitCertificate, app: &mut dyn Application, out: &mut Output) {
        let h = cert.height();
        if h < self.state.height {
            return;
        }
        if h > self.state.height {
            if self.pending_certs.len() < MAX_PENDING_CERTS {
                self.pending_certs.entry(h).or_insert(cert);
            }
            return;
        }
        if !cert.verify(&self.set, self.verifier.as_ref()) {
            self.stats.dropped_invalid += 1;
            return;
        }
        let hash = cert.block.hash();
        self.blocks.insert(hash, cert.block.clone());
        if !self.is_valid(&hash, app) {
            return;
        }
        self.finalize(cert, app, out);
    }

    fn finalize(&mut self, cert: CommitCertificate, app: &mut dyn Application, out: &mut Output) {
        app.commit(&cert);
        let next = cert.height() + 1;
        out.commits.push(cert);
        self.enter_new_height(next, app, out);
    }

    fn cast(&mut self, kind: MessageKind, target: VoteTarget, out: &mut Output) {
        let Some(key) = &self.key else { return };
        let m = ConsensusMessage::new_signed(key, kind, self.state.height, self.state.round, target, None);
        let map = if kind == MessageKind::Prevote {
            &mut self.prevotes
        } else {
            &mut self.precommits
        };
        map.entry(m.round).or_default().insert(m.sender, m.clone());
        out.messages.push(m);
    }

    fn is_valid(&mut self, hash: &Hash, app: &mut dyn Application) -> bool {
        if let Some(v) = self.validity.get(hash) {
            return *v;
        }
        let Some(block) = self.blocks.get(hash) else {
            return false;
        };
        let ok = block.height == self.state.height && app.validate_block(block);
        self.validity.insert(*hash, ok);
        ok
    }

    /// Tally for one round: votes per target, and total distinct voters.
    fn tally(map: &VoteMap, round: u32) -> (BTreeMap<VoteTarget, u64>, u64) {
        let mut per = BTreeMap::new();
        let Some(votes) = map.get(&round) else {
            return (per, 0);
        };
        for m in votes.values() {
            *per.entry(m.block_hash).or_insert(0) += 1;
        }
        (per, votes.len() as u64)
    }

    fn quorum_target(&self, map: &VoteMap, round: u32) -> Option<VoteTarget> {
        let (per, _) = Self::tally(map, round);
        per.into_iter().find(|(_, n)| self.set.is_quorum(*n)).map(|(t, _)| t)
    }

    /// Fire every rule whose condition holds, until none does.
    fn evaluate(&mut self, app: &mut dyn Application, out: &mut Output) {
        loop {
            let height = self.state.height;
            if self.try_commit(app, out) {
                return;
            }
            if !self.is_validator() {
                return;
            }
            let progressed = self.try_round_skip(app, out) || self.try_step(app, out);
            if !progressed || self.state.height != height {
                return;
            }
        }
    }

    fn try_commit(&mut self, app: &mut dyn Application, out: &mut Output) -> bool {
        let rounds: Vec<u32> = self.precommits.keys().copied().collect();
        for r in rounds {
            let Some(VoteTarget::Block(hash)) = self.quorum_target(&self.precommits, r) else {
                continue;
            };
            if !self.is_valid(&hash, app) {
                continue;
            }
            let block = self.blocks[&hash].clone();
            let precommits = self.precommits[&r]
                .values()
                .filter(|m| m.block_hash == VoteTarget::Block(hash))
                .cloned()
                .collect();
            self.finalize(CommitCertificate { block, precommits }, app, out);
            return true;
        }
        false
    }

    fn try_round_skip(&mut self, app: &mut dyn Application, out: &mut Output) -> bool {
        if self.state.step == Step::NewHeight {
            return false;
        }
        let current = self.state.round;
        let mut senders: BTreeMap<u32, BTreeSet<Address>> = BTreeMap::new();
        for (r, m) in self.proposals.range(current + 1..) {
            senders.entry(*r).or_default().insert(m.sender);
        }
        for map in [&self.prevotes, &self.precommits] {
            for (r, votes) in map.range(current + 1..) {
                senders.entry(*r).or_default().extend(votes.keys().copied());
            }
        }
        let target = senders
            .into_iter()
            .rev()
            .find(|(_, s)| self.set.is_one_third_plus(s.len() as u64))
            .map(|(r, _)| r);
        match target {
            Some(r) => {
                self.enter_round(r, app, out);
                true
            }
            None => false,
        }
    }

    fn try_step(&mut self, app: &mut dyn Application, out: &mut Output) -> bool {
        let round = self.state.round;
        match self.state.step {
            Step::NewHeight => return false,
            Step::Propose => {
                if let Some(p) = self.proposals.get(&round) {
                    let VoteTarget::Block(hash) = p.block_hash else { return false };
                    let target = match self.state.locked {
                        Some((locked, _)) => VoteTarget::Block(locked),
                        None => {
                            if self.is_valid(&hash, app) {
                                VoteTarget::Block(hash)
                            } else {
                                VoteTarget::Nil
                            }
                        }
                    };
                    self.cast(MessageKind::Prevote, target, out);
                    self.step_to(Step::Prevote, out);
                    return true;
                }
            }
            Step::Prevote => match self.quorum_target(&self.prevotes, round) {
                Some(VoteTarget::Block(hash)) if self.is_valid(&hash, app) => {
                    self.state.locked = Some((hash, round));
                    self.locked_block = self.blocks.get(&hash).cloned();
                    self.cast(MessageKind::Precommit, VoteTarget::Block(hash), out);
                    self.step_to(Step::Precommit, out);
                    return true;
                }
                Some(VoteTarget::Nil) => {
                    self.cast(MessageKind::Precommit, VoteTarget::Nil, out);
                    self.step_to(Step::Precommit, out);
                    return true;
                }
                _ => {}
            },
            Step::Precommit => {}
        }

        // A later prevote quorum for another block moves the lock.
        if let Some((locked_hash, locked_round)) = self.state.locked {
            let later: Vec<u32> = self.prevotes.range(locked_round + 1..).map(|(r, _)| *r).collect();
            for r in later {
                if let Some(VoteTarget::Block(h)) = self.quorum_target(&self.prevotes, r) {
                    if h != locked_hash && self.is_valid(&h, app) {
                        self.state.locked = Some((h, r));
                        self.locked_block = self.blocks.get(&h).cloned();
                        return true;
                    }
                }
            }
        }
        false
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::consensus::Validator;
    use crate::identity::DirectVerifier;
    use std::collections::VecDeque;

    #[derive(Default)]
    struct MockApp {
        committed: Vec<(u64, Hash, u32)>,
        reject: BTreeSet<Hash>,
    }

    impl Application for MockApp {
        fn create_proposal(&mut self, height: u64, round: u32, proposer: Address) -> Option<Block> {
            Some(Block {
                height,
                timestamp: height * 10 + round as u64,
                prev_hash: Hash::ZERO,
                transactions: vec![],
                app_state_hash: Hash::ZERO,
                proposer,
            })
        }
        fn validate_block(&mut self, block: &Block) -> bool {
            !self.reject.contains(&block.hash())
        }
        fn commit(&mut self, cert: &CommitCertificate) {
            self.committed.push((cert.height(), cert.block.hash(), cert.precommits[0].round));
        }
    }

    struct Net {
        engines: Vec<ConsensusEngine>,
        apps: Vec<MockApp>,
        silent: BTreeSet<usize>,
        queue: VecDeque<(usize, Input)>,
        timers: BTreeMap<(u64, u64), (usize, TimeoutEvent)>,
        now: u64,
        seq: u64,
    }

    impl Net {
        fn new(n: usize, light: usize) -> Self {
            let keys: Vec<KeyPair> = (0..n).map(|i| KeyPair::from_label(&format!("engine-{i}"))).collect();
            let set = ValidatorSet::new(
                keys.iter()
                    .map(|k| Validator {
                        address: k.address(),
                        pubkey: k.public_key(),
                    })
                    .collect(),
            )
            .unwrap();
            let v: Arc<dyn SignatureVerifier> = Arc::new(DirectVerifier);
            let mut engines: Vec<ConsensusEngine> = keys
                .into_iter()
                .map(|k| ConsensusEngine::new(set.clone(), Some(k), ConsensusConfig::default(), 1, v.clone()))
                .collect();
            for _ in 0..light {
                engines.push(ConsensusEngine::new(set.clone(), None, ConsensusConfig::default(), 1, v.clone()));
            }
            let apps = (0..engines.len()).map(|_| MockApp::default()).collect();
            Net {
                engines,
                apps,
                silent: BTreeSet::new(),
                queue: VecDeque::new(),
                timers: BTreeMap::new(),
                now: 0,
                seq: 0,
            }
        }

        fn absorb(&mut self, from: usize, out: Output) {
            for m in out.messages {
                for to in 0..self.engines.len() {
                    if to != from {
                        self.queue.push_back((to, Input::Message(m.clone())));
                    }
                }
            }
            for c in out.commits {
                for to in 0..self.engines.len() {
                    if to != from {
                        self.queue.push_back((to, Input::Commit(c.clone())));
                    }
                }
            }
            for (ev, delay) in out.timeouts {
                self.seq += 1;
                self.timers.insert((self.now + delay, self.seq), (from, ev));
            }
        }

        fn run(&mut self, until_ms: u64) {
            for i in 0..self.engines.len() {
                if !self.silent.contains(&i) {
                    let out = self.engines[i].start(&mut self.apps[i]);
                    self.absorb(i, out);
                }
            }
            loop {
                if let Some((to, input)) = self.queue.pop_front() {
                    if self.silent.contains(&to) {
                        continue;
                    }
                    let out = self.engines[to].handle(input, &mut self.apps[to]);
                    self.absorb(to, out);
                    continue;
                }
                let Some((&(at, seq), _)) = self.timers.iter().next() else { break };
                if at > until_ms {
                    break;
                }
                let (to, ev) = self.timers.remove(&(at, seq)).unwrap();
                self.now = at;
                if !self.silent.contains(&to) {
                    let out = self.engines[to].handle(Input::Timeout(ev), &mut self.apps[to]);
                    self.absorb(to, out);
                }
            }
        }

        fn heights(&self, i: usize) -> Vec<u64> {
            self.apps[i].committed.iter().map(|c| c.0).collect()
        }
    }

    #[test]
    fn honest_validators_commit_in_round_zero() {
        let mut net = Net::new(4, 1);
        net.run(60_000);
        let first = &net.apps[0].committed;
        assert!(first.len() >= 10);
        assert!(first.iter().all(|c| c.2 == 0));
        for i in 1..5 {
            let other = &net.apps[i].committed;
            let n = first.len().min(other.len());
            assert!(n >= 9);
            assert_eq!(&first[..n], &other[..n], "node {i}");
        }
        assert!(!net.engines[4].is_validator());
    }

    #[test]
    fn one_silent_of_four_still_commits() {
        let mut net = Net::new(4, 0);
        net.silent.insert(2);
        net.run(120_000);
        let h = net.heights(0);
        assert!(h.len() >= 10);
        assert_eq!(h, (1..=h.len() as u64).collect::<Vec<_>>());
        // heights whose round-0 proposer is the silent node need round 1
        assert!(net.apps[0].committed.iter().any(|c| c.2 > 0));
        assert!(net.engines[0].stats().rounds_started > h.len() as u64);
    }

    #[test]
    fn two_silent_of_four_never_commit() {
        let mut net = Net::new(4, 0);
        net.silent.extend([1, 3]);
        net.run(600_000);
        for i in [0, 2] {
            assert!(net.apps[i].committed.is_empty());
        }
    }

    #[test]
    fn invalid_proposal_gets_nil_and_next_round_commits() {
        let mut net = Net::new(4, 0);
        let bad = MockApp::default()
            .create_proposal(1, 0, net.engines[1].key.as_ref().unwrap().address())
            .unwrap()
            .hash();
        for app in &mut net.apps {
            app.reject.insert(bad);
        }
        net.run(30_000);
        let c = &net.apps[0].committed[0];
        assert_eq!(c.0, 1);
        assert_ne!(c.1, bad);
        assert_eq!(c.2, 1);
    }

    #[test]
    fn forged_and_foreign_messages_are_counted() {
        let mut net = Net::new(4, 0);
        let outsider = KeyPair::from_label("outsider");
        let m = ConsensusMessage::new_signed(&outsider, MessageKind::Prevote, 1, 0, VoteTarget::Nil, None);
        let _ = net.engines[0].handle(Input::Message(m), &mut net.apps[0]);
        let key = net.engines[1].key.clone().unwrap();
        let mut forged = ConsensusMessage::new_signed(&key, MessageKind::Prevote, 1, 0, VoteTarget::Nil, None);
        forged.round = 1;
        let _ = net.engines[0].handle(Input::Message(forged), &mut net.apps[0]);
        assert_eq!(net.engines[0].stats().dropped_invalid, 2);

        let a = ConsensusMessage::new_signed(&key, MessageKind::Prevote, 1, 0, VoteTarget::Nil, None);
        let b = ConsensusMessage::new_signed(&key, MessageKind::Prevote, 1, 0, VoteTarget::Block(Hash::ZERO), None);
        let _ = net.engines[0].handle(Input::Message(a), &mut net.apps[0]);
        let _ = net.engines[0].handle(Input::Message(b), &mut net.apps[0]);
        assert_eq!(net.engines[0].stats().equivocations, 1);
    }

    #[test]
    fn locked_block_may_be_reproposed_by_the_next_proposer() {
        let mut net = Net::new(4, 0);
        let keys: Vec<KeyPair> = net.engines.iter().map(|e| e.key.clone().unwrap()).collect();
        let set = net.engines[0].validator_set().clone();
        let _ = net.engines[0].start(&mut net.apps[0]);
        let r1 = set.proposer_for(1, 1).unwrap().address;
        let r0 = set.proposer_for(1, 0).unwrap().address;
        let by = |a: Address| keys.iter().find(|k| k.address() == a).unwrap();
        let block = MockApp::default().create_proposal(1, 0, r0).unwrap();
        let propose_at = |sender: &KeyPair, b: &Block, round| {
            ConsensusMessage::new_signed(sender, MessageKind::Proposal, 1, round, VoteTarget::Block(b.hash()), Some(b.clone()))
        };
        let e = &mut net.engines[0];
        let _ = e.handle(Input::Message(propose_at(by(r1), &block, 1)), &mut net.apps[0]);
        assert_eq!(e.stats().dropped_invalid, 0);
        assert!(e.proposals.contains_key(&1));

        let r2 = set.proposer_for(1, 2).unwrap().address;
        let wrong_sender = keys.iter().find(|k| k.address() != r2).unwrap();
        let mut other = block.clone();
        other.timestamp += 1;
        let _ = e.handle(Input::Message(propose_at(wrong_sender, &other, 2)), &mut net.apps[0]);
        assert_eq!(e.stats().dropped_invalid, 1);
        let mut foreign = block;
        foreign.proposer = KeyPair::from_label("outsider").address();
        let before = e.stats().dropped_invalid;
        let r3 = set.proposer_for(1, 3).unwrap().address;
        let _ = e.handle(Input::Message(propose_at(by(r3), &foreign, 3)), &mut net.apps[0]);
        assert_eq!(e.stats().dropped_invalid, before + 1);
    }

    #[test]
    fn rounds_advance_without_any_quorum() {
        let mut net = Net::new(4, 0);
        net.silent.extend([1, 2, 3]);
        net.run(60_000);
        assert!(net.apps[0].committed.is_empty());
        assert!(net.engines[0].stats().rounds_started >= 5);
    }

    #[test]
    fn timeouts_grow_per_round() {
        let net = Net::new(1, 0);
        let e = &net.engines[0];
        assert_eq!(e.timeout_for(Step::Propose, 0), 1000);
        assert_eq!(e.timeout_for(Step::Prevote, 2), 1000);
        assert_eq!(e.timeout_for(Step::NewHeight, 7), 5000);
    }
}
