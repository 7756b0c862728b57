//! Process wiring. Three loops run side by side and talk over channels:
//! consensus (owns the replica), the household agent, and HTTP.

use std::collections::BTreeSet;
use std::net::SocketAddr;
use std::path::Path;
use std::sync::{Arc, RwLock};
use std::time::{Duration, Instant, SystemTime, UNIX_EPOCH};

use futures::StreamExt;
use gridmarket_core::consensus::{TimeoutEvent, WireMessage};
use gridmarket_core::explorer::ChainStore;
use gridmarket_core::identity::{generate_keypair, Address, CachedVerifier, KeyPair};
use gridmarket_core::ledger::{BlockLog, Genesis, Transaction, TxError};
use gridmarket_core::metering::load_profiles;
use gridmarket_core::node::{Node, NodeEvent, NodeOutput};
use tokio::net::TcpListener;
use tokio::sync::{broadcast, mpsc, oneshot, watch};
use tokio::task::JoinHandle;
use tokio_util::sync::CancellationToken;
use tokio_util::time::DelayQueue;

use crate::agent::{spawn_agent, AgentHandle, Household};
use crate::config::Config;
use crate::data::{ChainDir, CommitLog, Roster, SharedChain, CHAIN_LOG, COMMITS_LOG, GENESIS_FILE};
use crate::http::{router, ApiState};
use crate::keyfile::read_key;
use crate::net::{CertStore, Inbound, Network};
use crate::NodeError;

/// Minimum spacing of repeated sync requests while the tip is not moving.
const SYNC_RETRY: Duration = Duration::from_secs(2);

pub struct Listeners {
    pub p2p: TcpListener,
    pub http: TcpListener,
}

impl Listeners {
    pub async fn bind(config: &Config) -> Result<Self, NodeError> {
        let bind = |addr: SocketAddr| async move {
            TcpListener::bind(addr)
                .await
                .map_err(|e| NodeError::Config(format!("cannot listen on {addr}: {e}")))
        };
        Ok(Self {
            p2p: bind(config.node.listen).await?,
            http: bind(config.node.http).await?,
        })
    }
}

/// A running node. Dropping it leaves the tasks running; call `shutdown`.
pub struct NodeHandle {
    /// Network identity: the key's address, or an ephemeral one.
    pub address: Address,
    pub validator: bool,
    pub p2p_addr: SocketAddr,
    pub http_addr: SocketAddr,
    pub chain: SharedChain,
    pub network: Network,
    pub agent: Option<AgentHandle>,
    height: watch::Receiver<u64>,
    shutdown: CancellationToken,
    tasks: Vec<JoinHandle<()>>,
}

impl NodeHandle {
    pub fn height(&self) -> u64 {
        *self.height.borrow()
    }

    /// Wait until the committed height reaches `height`.
    pub async fn wait_for_height(&self, height: u64, timeout: Duration) -> bool {
        let mut rx = self.height.clone();
        tokio::time::timeout(timeout, rx.wait_for(|h| *h >= height)).await.is_ok_and(|r| r.is_ok())
    }

    /// Cancelled when the node stops, including on a fatal storage error.
    pub fn stopped(&self) -> CancellationToken {
        self.shutdown.clone()
    }

    pub async fn shutdown(self) {
        self.shutdown.cancel();
        for t in self.tasks {
            let _ = t.await;
        }
    }
}

fn now_ms() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_millis() as u64)
}

/// Keep a copy of genesis next to the logs so the data directory is a
/// complete chain directory, and refuse to reuse it for another chain.
fn pin_genesis(dir: &Path, genesis: &Genesis) -> Result<(), NodeError> {
    let path = dir.join(GENESIS_FILE);
    if path.exists() {
        let stored = Genesis::load(&path)?;
        if stored.hash() != genesis.hash() {
            return Err(NodeError::Config(format!(
                "{} belongs to chain {} ({}), not {} ({})",
                dir.display(),
                stored.chain_id,
                stored.hash(),
                genesis.chain_id,
                genesis.hash()
            )));
        }
        return Ok(());
    }
    genesis.save(&path)?;
    Ok(())
}

fn agent_households(config: &Config, node_key: Option<&KeyPair>, interval_seconds: u64) -> Result<Vec<Household>, NodeError> {
    let Some(a) = &config.agent else { return Ok(Vec::new()) };
    let key = match (&a.key, node_key) {
        (Some(path), _) => read_key(path)?,
        (None, Some(k)) => k.clone(),
        (None, None) => return Err(NodeError::Config("agent needs agent.key or node.key".into())),
    };
    let path = a
        .profiles
        .as_ref()
        .or(config.node.profiles.as_ref())
        .ok_or_else(|| NodeError::Config("agent needs agent.profiles or node.profiles".into()))?;
    let mut profile = load_profiles(path, interval_seconds)?
        .into_iter()
        .find(|p| p.household_id == a.household)
        .ok_or_else(|| NodeError::Config(format!("{}: no household {:?}", path.display(), a.household)))?;
    profile.kind = a.kind;
    Ok(vec![Household { key, profile }])
}

/// Start a node on the given listeners.
pub async fn start(config: Config, listeners: Listeners) -> Result<NodeHandle, NodeError> {
    let genesis = Genesis::load(&config.node.genesis)?;
    config.check_genesis(&genesis)?;
    let genesis_hash = genesis.hash();
    let key = config.node.key.as_deref().map(read_key).transpose()?;
    let validator = config.node.validator;
    if validator {
        match &key {
            Some(k) if genesis.validators.contains(&k.address()) => {}
            Some(k) => {
                return Err(NodeError::Config(format!("key {} is not a genesis validator", k.address())));
            }
            None => return Err(NodeError::Config("a validator needs node.key".into())),
        }
    }

    let dir = &config.node.data_dir;
    std::fs::create_dir_all(dir).map_err(|e| NodeError::io(dir, e))?;
    pin_genesis(dir, &genesis)?;
    let log_path = dir.join(CHAIN_LOG);
    let blocks = if log_path.exists() { BlockLog::read_all(&log_path)? } else { Vec::new() };
    let commits_path = dir.join(COMMITS_LOG);
    let certs: CertStore = Arc::new(RwLock::new(CommitLog::read_matching(&commits_path, &blocks)?));
    let verifier = Arc::new(CachedVerifier::new());
    let interval_seconds = genesis.interval_seconds;
    let tariff = genesis.tariff;
    let validator_addrs: BTreeSet<Address> = genesis.validators.validators.iter().map(|v| v.address).collect();
    let store = ChainStore::replay(genesis, blocks, verifier.as_ref())?;
    tracing::info!(height = store.tip_height(), "chain loaded");
    let node = Node::from_chain(
        store.clone(),
        if validator { key.clone() } else { None },
        config.node_config(),
        verifier.clone(),
    );
    let chain: SharedChain = Arc::new(RwLock::new(store));

    let mut roster = match (&config.node.households, &config.node.profiles) {
        (Some(h), Some(p)) => Roster::load(h, p, interval_seconds)?,
        (Some(_), None) => return Err(NodeError::Config("node.households needs node.profiles".into())),
        _ => Roster::default(),
    };
    let households = agent_households(&config, key.as_ref(), interval_seconds)?;
    for h in &households {
        roster.insert(h.key.address(), h.profile.clone());
    }

    let shutdown = CancellationToken::new();
    let address = key.as_ref().map_or_else(|| generate_keypair(None).address(), KeyPair::address);
    let (inbox_tx, inbox) = mpsc::channel(4096);
    let network = Network::new(address, genesis_hash, validator_addrs, certs.clone(), inbox_tx, shutdown.clone());
    let (submit_tx, submits) = mpsc::channel(256);
    let (intervals, _) = broadcast::channel(64);
    let (height_tx, height) = watch::channel(node.chain().tip_height());

    let mut tasks = Vec::new();
    let agent = if households.is_empty() {
        None
    } else {
        let (handle, task) = spawn_agent(households, tariff, chain.clone(), intervals.subscribe(), submit_tx.clone());
        tasks.push(task);
        Some(handle)
    };

    let p2p_addr = listeners.p2p.local_addr().map_err(|e| NodeError::Config(e.to_string()))?;
    let http_addr = listeners.http.local_addr().map_err(|e| NodeError::Config(e.to_string()))?;
    tasks.push(network.spawn_listener(listeners.p2p));
    for peer in &config.node.peers {
        tasks.push(network.spawn_dialer(peer.clone()));
    }

    let consensus = Consensus {
        node,
        net: network.clone(),
        chain: chain.clone(),
        certs,
        block_log: BlockLog::open(&log_path)?,
        commit_log: CommitLog::open(&commits_path)?,
        verifier,
        timers: DelayQueue::new(),
        intervals,
        height: height_tx,
        last_sync: None,
    };
    tasks.push(tokio::spawn(consensus.run(inbox, submits, shutdown.clone())));

    let api = ApiState {
        chain: chain.clone(),
        roster: Arc::new(roster),
        agent: agent.clone(),
    };
    tasks.push(spawn_http(listeners.http, api, shutdown.clone()));
    tracing::info!(%address, validator, %p2p_addr, %http_addr, "node started");

    Ok(NodeHandle {
        address,
        validator,
        p2p_addr,
        http_addr,
        chain,
        network,
        agent,
        height,
        shutdown,
        tasks,
    })
}

fn spawn_http(listener: TcpListener, api: ApiState, shutdown: CancellationToken) -> JoinHandle<()> {
    tokio::spawn(async move {
        let server = axum::serve(listener, router(api)).with_graceful_shutdown(shutdown.clone().cancelled_owned());
        if let Err(e) = server.await {
            tracing::error!("http server failed: {e}");
            shutdown.cancel();
        }
    })
}

type Submission = (Transaction, oneshot::Sender<Result<(), TxError>>);

struct Consensus {
    node: Node,
    net: Network,
    chain: SharedChain,
    certs: CertStore,
    block_log: BlockLog,
    commit_log: CommitLog,
    verifier: Arc<CachedVerifier>,
    timers: DelayQueue<TimeoutEvent>,
    intervals: broadcast::Sender<u64>,
    height: watch::Sender<u64>,
    /// Tip height and time of the last sync request.
    last_sync: Option<(u64, Instant)>,
}

impl Consensus {
    async fn run(
        mut self,
        mut inbox: mpsc::Receiver<Inbound>,
        mut submits: mpsc::Receiver<Submission>,
        shutdown: CancellationToken,
    ) {
        let out = self.node.start(now_ms());
        if let Err(e) = self.apply(out) {
            tracing::error!("stopping: {e}");
            shutdown.cancel();
            return;
        }
        loop {
            let result = tokio::select! {
                _ = shutdown.cancelled() => break,
                Some(expired) = self.timers.next() => {
                    let out = self.node.timeout(expired.into_inner(), now_ms());
                    self.apply(out)
                }
                Some(inbound) = inbox.recv() => self.inbound(inbound),
                Some((tx, reply)) = submits.recv() => match self.node.submit(tx) {
                    Ok(out) => {
                        let _ = reply.send(Ok(()));
                        self.apply(out)
                    }
                    Err(e) => {
                        let _ = reply.send(Err(e));
                        Ok(())
                    }
                },
            };
            if let Err(e) = result {
                tracing::error!("stopping: {e}");
                shutdown.cancel();
                break;
            }
        }
    }

    fn tip(&self) -> u64 {
        self.node.chain().tip_height()
    }

    fn inbound(&mut self, inbound: Inbound) -> Result<(), NodeError> {
        match inbound {
            Inbound::PeerUp { peer } => {
                self.net.send_to(&peer, WireMessage::SyncRequest { from_height: self.tip() + 1 });
                Ok(())
            }
            Inbound::Wire { from, msg } => {
                if let WireMessage::Commit(c) = &msg {
                    if c.height() > self.tip() + 1 {
                        self.request_sync(&from);
                    }
                }
                let out = self.node.handle(&msg, now_ms());
                self.apply(out)
            }
        }
    }

    fn request_sync(&mut self, peer: &Address) {
        let tip = self.tip();
        if let Some((at, when)) = self.last_sync {
            if at == tip && when.elapsed() < SYNC_RETRY {
                return;
            }
        }
        self.last_sync = Some((tip, Instant::now()));
        tracing::debug!(%peer, from_height = tip + 1, "requesting sync");
        self.net.send_to(peer, WireMessage::SyncRequest { from_height: tip + 1 });
    }

    /// Persist commits before announcing them, then route everything else.
    fn apply(&mut self, out: NodeOutput) -> Result<(), NodeError> {
        for cert in out.certificates {
            self.block_log.append(&cert.block)?;
            self.commit_log.append(&cert)?;
            self.chain
                .write()
                .expect("chain lock")
                .append(cert.block.clone(), self.verifier.as_ref())?;
            self.certs.write().expect("cert lock").insert(cert.height(), cert);
        }
        for (ev, delay_ms) in out.timeouts {
            self.timers.insert(ev, Duration::from_millis(delay_ms));
        }
        for o in &out.send {
            self.net.send(o);
        }
        for ev in out.events {
            match ev {
                NodeEvent::Committed {
                    height,
                    block_hash,
                    round,
                    ..
                } => {
                    tracing::info!(height, round, block = %block_hash, "committed");
                    self.height.send_replace(height);
                }
                NodeEvent::IntervalOpened { interval_id } => {
                    let _ = self.intervals.send(interval_id);
                }
            }
        }
        Ok(())
    }
}

/// A read-only explorer over a chain directory.
pub struct ExplorerHandle {
    pub http_addr: SocketAddr,
    pub chain: SharedChain,
    shutdown: CancellationToken,
    tasks: Vec<JoinHandle<()>>,
}

impl ExplorerHandle {
    pub async fn shutdown(self) {
        self.shutdown.cancel();
        for t in self.tasks {
            let _ = t.await;
        }
    }
}

/// Serve `dir` over HTTP and pick up blocks appended to its chain.log
/// every `poll`.
pub fn start_explorer(dir: &Path, listener: TcpListener, poll: Duration) -> Result<ExplorerHandle, NodeError> {
    let verifier = CachedVerifier::new();
    let ChainDir {
        chain,
        roster,
        mut follower,
    } = ChainDir::open(dir, &verifier)?;
    tracing::info!(height = chain.tip_height(), households = roster.len(), "chain directory loaded");
    let http_addr = listener.local_addr().map_err(|e| NodeError::Config(e.to_string()))?;
    let chain: SharedChain = Arc::new(RwLock::new(chain));
    let shutdown = CancellationToken::new();
    let api = ApiState {
        chain: chain.clone(),
        roster: Arc::new(roster),
        agent: None,
    };
    let follow_chain = chain.clone();
    let token = shutdown.clone();
    let follow = tokio::spawn(async move {
        let mut tick = tokio::time::interval(poll);
        loop {
            tokio::select! {
                _ = token.cancelled() => return,
                _ = tick.tick() => {}
            }
            let appended = follower.poll().and_then(|blocks| {
                let mut c = follow_chain.write().expect("chain lock");
                for b in blocks {
                    c.append(b, &verifier)?;
                }
                Ok(c.tip_height())
            });
            if let Err(e) = appended {
                tracing::error!("no longer following the chain: {e}");
                return;
            }
        }
    });
    let tasks = vec![follow, spawn_http(listener, api, shutdown.clone())];
    Ok(ExplorerHandle {
        http_addr,
        chain,
        shutdown,
        tasks,
    })
}
