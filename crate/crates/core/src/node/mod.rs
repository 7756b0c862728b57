//! A replica: consensus engine, committed chain, and mempool. Sans-IO; the
//! caller delivers messages and timeouts and routes the returned output.

mod mempool;

pub use mempool::Mempool;

use std::collections::HashMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::consensus::{
    Application, CommitCertificate, ConsensusConfig, ConsensusEngine, EngineStats, Input, Output, TimeoutEvent,
    WireMessage,
};
use crate::explorer::ChainStore;
use crate::identity::{Address, Hash, KeyPair, SignatureVerifier};
use crate::ledger::{AppState, Block, Genesis, LedgerError, Transaction, TxError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum TimestampPolicy {
    /// Each block advances time by exactly `block_seconds`; validators accept
    /// any timestamp after the parent and at most that far ahead.
    Logical { block_seconds: u64 },
    /// Proposers stamp wall-clock seconds; validators reject blocks more than
    /// `max_drift_seconds` ahead of their own clock.
    WallClock { max_drift_seconds: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct NodeConfig {
    pub consensus: ConsensusConfig,
    pub timestamps: TimestampPolicy,
    pub max_block_txs: usize,
    pub mempool_limit: usize,
    /// Forward newly admitted transactions to the other validators.
    pub relay_txs: bool,
}

impl Default for NodeConfig {
    fn default() -> Self {
        Self {
            consensus: ConsensusConfig::default(),
            timestamps: TimestampPolicy::WallClock { max_drift_seconds: 30 },
            max_block_txs: 1000,
            mempool_limit: 10_000,
            relay_txs: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum NodeEvent {
    Committed {
        height: u64,
        block_hash: Hash,
        state_hash: Hash,
        round: u32,
    },
    /// Orders for this interval are now accepted. Also emitted at start.
    IntervalOpened { interval_id: u64 },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Outbound {
    Validators(WireMessage),
    Everyone(WireMessage),
}

#[derive(Debug, Default)]
pub struct NodeOutput {
    pub send: Vec<Outbound>,
    pub timeouts: Vec<(TimeoutEvent, u64)>,
    pub events: Vec<NodeEvent>,
    /// Certificates for the blocks committed by this call, in height order.
    pub certificates: Vec<CommitCertificate>,
}

struct NodeApp {
    chain: ChainStore,
    mempool: Mempool,
    /// Executed but uncommitted candidates for the next height.
    pending: HashMap<Hash, AppState>,
    config: NodeConfig,
    now_ms: u64,
    verifier: Arc<dyn SignatureVerifier>,
    events: Vec<NodeEvent>,
}

impl NodeApp {
    fn next_timestamp(&self) -> u64 {
        let prev = self.chain.state().last_timestamp;
        match self.config.timestamps {
            TimestampPolicy::Logical { block_seconds } => prev + block_seconds,
            TimestampPolicy::WallClock { .. } => (self.now_ms / 1000).max(prev + 1),
        }
    }

    fn timestamp_acceptable(&self, ts: u64) -> bool {
        let prev = self.chain.state().last_timestamp;
        match self.config.timestamps {
            TimestampPolicy::Logical { block_seconds } => ts > prev && ts <= prev + block_seconds,
            TimestampPolicy::WallClock { max_drift_seconds } => ts > prev && ts <= self.now_ms / 1000 + max_drift_seconds,
        }
    }
}

impl Application for NodeApp {
    fn create_proposal(&mut self, height: u64, _round: u32, proposer: Address) -> Option<Block> {
        let state = self.chain.state();
        debug_assert_eq!(state.height + 1, height);
        let ts = self.next_timestamp();
        let candidates = self.mempool.iter().cloned();
        let (block, next) = state
            .build_block(ts, proposer, candidates, self.config.max_block_txs, self.verifier.as_ref())
            .ok()?;
        self.pending.insert(block.hash(), next);
        Some(block)
    }

    fn validate_block(&mut self, block: &Block) -> bool {
        let hash = block.hash();
        if self.pending.contains_key(&hash) {
            return true;
        }
        if !self.timestamp_acceptable(block.timestamp) {
            return false;
        }
        match self.chain.state().apply_block(block, self.verifier.as_ref()) {
            Ok(next) => {
                self.pending.insert(hash, next);
                true
            }
            Err(_) => false,
        }
    }

    fn commit(&mut self, cert: &CommitCertificate) {
        let hash = cert.block.hash();
        let next = match self.pending.remove(&hash) {
            Some(s) => s,
            None => self
                .chain
                .state()
                .apply_block(&cert.block, self.verifier.as_ref())
                .expect("engine validated the block before committing"),
        };
        self.pending.clear();
        let before = self.chain.state().current_interval_id;
        let state_hash = next.state_hash();
        self.chain.push_verified(cert.block.clone(), next);
        self.mempool.prune(self.chain.state(), &cert.block);
        self.events.push(NodeEvent::Committed {
            height: cert.height(),
            block_hash: hash,
            state_hash,
            round: cert.precommits.first().map_or(0, |m| m.round),
        });
        let after = self.chain.state().current_interval_id;
        if after != before {
            self.events.push(NodeEvent::IntervalOpened { interval_id: after });
        }
    }
}

pub struct Node {
    engine: ConsensusEngine,
    app: NodeApp,
}

impl Node {
    /// `key` makes this a validator if its address is in the genesis set;
    /// otherwise the node follows commits as a light node.
    pub fn new(
        genesis: Genesis,
        key: Option<KeyPair>,
        config: NodeConfig,
        verifier: Arc<dyn SignatureVerifier>,
    ) -> Self {
        Self::from_chain(ChainStore::new(genesis), key, config, verifier)
    }

    /// Resume after the chain's tip.
    pub fn from_chain(
        chain: ChainStore,
        key: Option<KeyPair>,
        config: NodeConfig,
        verifier: Arc<dyn SignatureVerifier>,
    ) -> Self {
        let set = chain.genesis().validators.clone();
        let engine = ConsensusEngine::new(set, key, config.consensus, chain.tip_height() + 1, verifier.clone());
        Self {
            engine,
            app: NodeApp {
                mempool: Mempool::new(config.mempool_limit),
                chain,
                pending: HashMap::new(),
                config,
                now_ms: 0,
                verifier,
                events: Vec::new(),
            },
        }
    }

    pub fn is_validator(&self) -> bool {
        self.engine.is_validator()
    }

    pub fn chain(&self) -> &ChainStore {
        &self.app.chain
    }

    pub fn state(&self) -> &AppState {
        self.app.chain.state()
    }

    pub fn mempool(&self) -> &Mempool {
        &self.app.mempool
    }

    pub fn engine(&self) -> &ConsensusEngine {
        &self.engine
    }

    pub fn stats(&self) -> EngineStats {
        self.engine.stats()
    }

    /// Build, without proposing, a different valid block for the same
    /// slot. Used to inject equivocation in tests.
    pub fn alternative_block(&self, block: &Block) -> Option<Block> {
        let state = self.state();
        let mut txs = block.transactions.clone();
        let ts = if block.timestamp - 1 > state.last_timestamp {
            block.timestamp - 1
        } else if txs.len() > 1 {
            txs.reverse();
            block.timestamp
        } else {
            return None;
        };
        let (alt, _) = state
            .build_block(ts, block.proposer, txs, usize::MAX, self.app.verifier.as_ref())
            .ok()?;
        (alt.hash() != block.hash()).then_some(alt)
    }

    pub fn start(&mut self, now_ms: u64) -> NodeOutput {
        self.app.now_ms = now_ms;
        let out = self.engine.start(&mut self.app);
        let interval_id = self.state().current_interval_id;
        let mut result = self.route(out);
        result.events.insert(0, NodeEvent::IntervalOpened { interval_id });
        result
    }

    pub fn handle(&mut self, msg: &WireMessage, now_ms: u64) -> NodeOutput {
        self.app.now_ms = now_ms;
        match msg {
            WireMessage::Consensus(m) => {
                let out = self.engine.handle(Input::Message(m.clone()), &mut self.app);
                self.route(out)
            }
            WireMessage::Commit(c) => {
                if c.height() < self.engine.height() {
                    return NodeOutput::default();
                }
                let out = self.engine.handle(Input::Commit(c.clone()), &mut self.app);
                self.route(out)
            }
            WireMessage::Tx(tx) => {
                let mut out = NodeOutput::default();
                if self.is_validator() && self.admit(tx).is_ok() && self.app.config.relay_txs {
                    out.send.push(Outbound::Validators(WireMessage::Tx(tx.clone())));
                }
                out
            }
            // Connection-level frames; the transport answers them.
            WireMessage::Hello { .. } | WireMessage::SyncRequest { .. } => NodeOutput::default(),
        }
    }

    pub fn timeout(&mut self, ev: TimeoutEvent, now_ms: u64) -> NodeOutput {
        self.app.now_ms = now_ms;
        let out = self.engine.handle(Input::Timeout(ev), &mut self.app);
        self.route(out)
    }

    /// Submit a locally signed transaction. It is checked against committed
    /// state, kept if this node validates, and sent to the validators.
    pub fn submit(&mut self, tx: Transaction) -> Result<NodeOutput, TxError> {
        self.check_admissible(&tx)?;
        if self.is_validator() {
            self.admit(&tx)?;
        }
        Ok(NodeOutput {
            send: vec![Outbound::Validators(WireMessage::Tx(tx))],
            ..NodeOutput::default()
        })
    }

    fn check_admissible(&self, tx: &Transaction) -> Result<(), TxError> {
        self.state().check_admission(tx, self.app.verifier.as_ref())
    }

    fn admit(&mut self, tx: &Transaction) -> Result<(), TxError> {
        self.check_admissible(tx)?;
        if self.app.mempool.insert(tx.clone()) {
            Ok(())
        } else {
            Err(TxError::DuplicateOrder)
        }
    }

    fn route(&mut self, out: Output) -> NodeOutput {
        let validator = self.is_validator();
        let mut send: Vec<Outbound> = out
            .messages
            .into_iter()
            .map(|m| Outbound::Validators(WireMessage::Consensus(m)))
            .collect();
        if validator {
            send.extend(out.commits.iter().map(|c| Outbound::Everyone(WireMessage::Commit(c.clone()))));
        }
        NodeOutput {
            send,
            timeouts: out.timeouts,
            events: std::mem::take(&mut self.app.events),
            certificates: out.commits,
        }
    }
}

/// Check a block log against genesis and rebuild the chain store.
pub fn load_chain(
    genesis: Genesis,
    blocks: Vec<Block>,
    verifier: &dyn SignatureVerifier,
) -> Result<ChainStore, LedgerError> {
    ChainStore::replay(genesis, blocks, verifier)
}
