//! TCP transport between replicas.
//!
//! Each side opens with `Hello`; a peer on another genesis or claiming our
//! own address is dropped. Two nodes that dial each other keep one
//! connection, the one dialed by the lower address. `SyncRequest` is
//! answered here from the certificate store without involving consensus.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex, RwLock};
use std::time::Duration;

use futures::{SinkExt, StreamExt};
use gridmarket_core::consensus::{CommitCertificate, WireMessage};
use gridmarket_core::identity::{Address, Hash};
use gridmarket_core::node::Outbound;
use tokio::net::{TcpListener, TcpStream};
use tokio::sync::mpsc;
use tokio_util::codec::Framed;
use tokio_util::sync::CancellationToken;

use crate::codec::WireCodec;

const HELLO_TIMEOUT: Duration = Duration::from_secs(5);
const REDIAL_DELAY: Duration = Duration::from_millis(500);
const PEER_QUEUE: usize = 1024;

/// Certificates by height, shared with the consensus loop.
pub type CertStore = Arc<RwLock<BTreeMap<u64, CommitCertificate>>>;

// PeerUp is rare; boxing every wire message would cost more than the padding.
#[allow(clippy::large_enum_variant)]
#[derive(Debug)]
pub enum Inbound {
    Wire { from: Address, msg: WireMessage },
    /// A connection to `peer` is up. Sent once per accepted connection.
    PeerUp { peer: Address },
}

struct Conn {
    id: u64,
    tx: mpsc::Sender<Arc<WireMessage>>,
    preferred: bool,
    closed: CancellationToken,
}

struct Inner {
    me: Address,
    genesis_hash: Hash,
    validators: BTreeSet<Address>,
    peers: Mutex<HashMap<Address, Conn>>,
    certs: CertStore,
    inbox: mpsc::Sender<Inbound>,
    next_id: AtomicU64,
    shutdown: CancellationToken,
}

#[derive(Clone)]
pub struct Network {
    inner: Arc<Inner>,
}

#[derive(Debug, thiserror::Error)]
enum ConnError {
    #[error(transparent)]
    Codec(#[from] crate::codec::CodecError),
    #[error("peer closed before hello")]
    NoHello,
    #[error("hello timed out")]
    HelloTimeout,
    #[error("peer is on genesis {0}")]
    WrongChain(Hash),
    #[error("peer claims our own address")]
    SelfConnection,
    #[error("already connected to {0}")]
    Duplicate(Address),
}

impl Network {
    pub fn new(
        me: Address,
        genesis_hash: Hash,
        validators: BTreeSet<Address>,
        certs: CertStore,
        inbox: mpsc::Sender<Inbound>,
        shutdown: CancellationToken,
    ) -> Self {
        Self {
            inner: Arc::new(Inner {
                me,
                genesis_hash,
                validators,
                peers: Mutex::new(HashMap::new()),
                certs,
                inbox,
                next_id: AtomicU64::new(0),
                shutdown,
            }),
        }
    }

    pub fn address(&self) -> Address {
        self.inner.me
    }

    pub fn peers(&self) -> Vec<Address> {
        let mut v: Vec<Address> = self.inner.peers.lock().unwrap().keys().copied().collect();
        v.sort();
        v
    }

    pub fn is_connected(&self, peer: &Address) -> bool {
        self.inner.peers.lock().unwrap().contains_key(peer)
    }

    /// Queue without waiting. A full peer queue drops the message; consensus
    /// timeouts and sync recover from the loss.
    pub fn send(&self, out: &Outbound) {
        let (msg, only_validators) = match out {
            Outbound::Validators(m) => (m, true),
            Outbound::Everyone(m) => (m, false),
        };
        let msg = Arc::new(msg.clone());
        for (addr, conn) in self.inner.peers.lock().unwrap().iter() {
            if only_validators && !self.inner.validators.contains(addr) {
                continue;
            }
            if conn.tx.try_send(msg.clone()).is_err() {
                tracing::warn!(peer = %addr, "peer queue full; message dropped");
            }
        }
    }

    pub fn send_to(&self, peer: &Address, msg: WireMessage) {
        if let Some(conn) = self.inner.peers.lock().unwrap().get(peer) {
            let _ = conn.tx.try_send(Arc::new(msg));
        }
    }

    pub fn spawn_listener(&self, listener: TcpListener) -> tokio::task::JoinHandle<()> {
        let net = self.clone();
        tokio::spawn(async move {
            loop {
                let accepted = tokio::select! {
                    _ = net.inner.shutdown.cancelled() => return,
                    a = listener.accept() => a,
                };
                match accepted {
                    Ok((stream, remote)) => {
                        let net = net.clone();
                        tokio::spawn(async move {
                            if let Err(e) = net.run_connection(stream, false).await {
                                tracing::debug!(%remote, "inbound connection ended: {e}");
                            }
                        });
                    }
                    Err(e) => {
                        tracing::warn!("accept failed: {e}");
                        tokio::time::sleep(REDIAL_DELAY).await;
                    }
                }
            }
        })
    }

    /// Keep a connection to `addr` open, redialing after failures.
    pub fn spawn_dialer(&self, addr: String) -> tokio::task::JoinHandle<()> {
        let net = self.clone();
        tokio::spawn(async move {
            let token = net.inner.shutdown.clone();
            while !token.is_cancelled() {
                let result = tokio::select! {
                    _ = token.cancelled() => return,
                    r = TcpStream::connect(&addr) => r,
                };
                match result {
                    Ok(stream) => match net.run_connection(stream, true).await {
                        // The peer dialed us first; wait until that link drops.
                        Err(ConnError::Duplicate(peer)) => {
                            while net.is_connected(&peer) && !token.is_cancelled() {
                                tokio::time::sleep(REDIAL_DELAY).await;
                            }
                        }
                        Err(e) => tracing::debug!(peer = %addr, "outbound connection ended: {e}"),
                        Ok(()) => tracing::debug!(peer = %addr, "outbound connection closed"),
                    },
                    Err(e) => tracing::trace!(peer = %addr, "dial failed: {e}"),
                }
                tokio::select! {
                    _ = token.cancelled() => return,
                    _ = tokio::time::sleep(REDIAL_DELAY) => {}
                }
            }
        })
    }

    async fn run_connection(&self, stream: TcpStream, dialed: bool) -> Result<(), ConnError> {
        let _ = stream.set_nodelay(true);
        let mut framed = Framed::new(stream, WireCodec::default());
        let me = self.inner.me;
        framed
            .send(WireMessage::Hello {
                address: me,
                genesis_hash: self.inner.genesis_hash,
            })
            .await?;
        let first = tokio::time::timeout(HELLO_TIMEOUT, framed.next())
            .await
            .map_err(|_| ConnError::HelloTimeout)?;
        let peer = match first {
            Some(Ok(WireMessage::Hello { address, genesis_hash })) => {
                if genesis_hash != self.inner.genesis_hash {
                    return Err(ConnError::WrongChain(genesis_hash));
                }
                if address == me {
                    return Err(ConnError::SelfConnection);
                }
                address
            }
            Some(Err(e)) => return Err(e.into()),
            _ => return Err(ConnError::NoHello),
        };

        let preferred = if dialed { me < peer } else { peer < me };
        let id = self.inner.next_id.fetch_add(1, Ordering::Relaxed);
        let (tx, mut rx) = mpsc::channel::<Arc<WireMessage>>(PEER_QUEUE);
        let closed = self.inner.shutdown.child_token();
        {
            let mut peers = self.inner.peers.lock().unwrap();
            match peers.get(&peer) {
                Some(old) if old.preferred || !preferred => return Err(ConnError::Duplicate(peer)),
                Some(old) => old.closed.cancel(),
                None => {}
            }
            peers.insert(
                peer,
                Conn {
                    id,
                    tx: tx.clone(),
                    preferred,
                    closed: closed.clone(),
                },
            );
        }
        tracing::info!(%peer, dialed, "peer connected");
        let _ = self.inner.inbox.send(Inbound::PeerUp { peer }).await;

        let (mut sink, mut stream) = framed.split();
        let writer_closed = closed.clone();
        let writer = tokio::spawn(async move {
            loop {
                let msg = tokio::select! {
                    _ = writer_closed.cancelled() => break,
                    m = rx.recv() => match m {
                        Some(m) => m,
                        None => break,
                    },
                };
                if sink.send(msg).await.is_err() {
                    break;
                }
            }
            writer_closed.cancel();
        });

        let result = loop {
            let frame = tokio::select! {
                _ = closed.cancelled() => break Ok(()),
                f = stream.next() => f,
            };
            let msg = match frame {
                None => break Ok(()),
                Some(Err(e)) => break Err(e.into()),
                Some(Ok(m)) => m,
            };
            match msg {
                WireMessage::Hello { .. } => {}
                WireMessage::SyncRequest { from_height } => {
                    let certs: Vec<CommitCertificate> = self
                        .inner
                        .certs
                        .read()
                        .unwrap()
                        .range(from_height.max(1)..)
                        .map(|(_, c)| c.clone())
                        .collect();
                    tracing::debug!(%peer, from_height, count = certs.len(), "serving sync");
                    for c in certs {
                        if tx.send(Arc::new(WireMessage::Commit(c))).await.is_err() {
                            break;
                        }
                    }
                }
                msg => {
                    if self.inner.inbox.send(Inbound::Wire { from: peer, msg }).await.is_err() {
                        break Ok(());
                    }
                }
            }
        };
        closed.cancel();
        let _ = writer.await;
        let mut peers = self.inner.peers.lock().unwrap();
        if peers.get(&peer).is_some_and(|c| c.id == id) {
            peers.remove(&peer);
            tracing::info!(%peer, "peer disconnected");
        }
        result
    }
}
