//! Household agent loop. One task owns the preferences; it bids when an
//! interval opens and serves preference reads and writes in between, so an
//! update never races an order being composed.

use std::collections::BTreeMap;
use std::sync::Arc;

use gridmarket_core::agent::{compose_order, AgentError, PreferenceStore, PreferenceUpdate, PricePreferences};
use gridmarket_core::identity::{Address, KeyPair};
use gridmarket_core::ledger::{Transaction, TxError};
use gridmarket_core::market::TariffConfig;
use gridmarket_core::metering::{HouseholdKind, HouseholdProfile};
use tokio::sync::{broadcast, mpsc, oneshot};
use tokio::task::JoinHandle;

use crate::data::SharedChain;

/// A household this agent bids for.
pub struct Household {
    pub key: KeyPair,
    pub profile: HouseholdProfile,
}

/// Hands a signed transaction to the consensus loop.
pub type Submitter = mpsc::Sender<(Transaction, oneshot::Sender<Result<(), TxError>>)>;

enum Command {
    Get(Address, oneshot::Sender<Option<PricePreferences>>),
    Update(Address, PreferenceUpdate, oneshot::Sender<Result<PricePreferences, AgentError>>),
}

/// The agent loop stopped; only happens on shutdown.
#[derive(Debug, Clone, Copy, thiserror::Error)]
#[error("agent is not running")]
pub struct AgentGone;

#[derive(Clone)]
pub struct AgentHandle {
    commands: mpsc::Sender<Command>,
    kinds: Arc<BTreeMap<Address, HouseholdKind>>,
    tariff: TariffConfig,
}

impl AgentHandle {
    /// `None` if this agent does not serve `account`.
    pub fn kind(&self, account: &Address) -> Option<HouseholdKind> {
        self.kinds.get(account).copied()
    }

    pub fn tariff(&self) -> &TariffConfig {
        &self.tariff
    }

    pub async fn preferences(&self, account: Address) -> Result<Option<PricePreferences>, AgentGone> {
        let (tx, rx) = oneshot::channel();
        self.commands.send(Command::Get(account, tx)).await.map_err(|_| AgentGone)?;
        rx.await.map_err(|_| AgentGone)
    }

    pub async fn update(
        &self,
        account: Address,
        update: PreferenceUpdate,
    ) -> Result<Result<PricePreferences, AgentError>, AgentGone> {
        let (tx, rx) = oneshot::channel();
        self.commands.send(Command::Update(account, update, tx)).await.map_err(|_| AgentGone)?;
        rx.await.map_err(|_| AgentGone)
    }
}

struct Agent {
    store: PreferenceStore,
    households: BTreeMap<Address, Household>,
    chain: SharedChain,
    submit: Submitter,
}

impl Agent {
    fn command(&mut self, c: Command) {
        match c {
            Command::Get(a, reply) => {
                let _ = reply.send(self.store.get(&a).cloned());
            }
            Command::Update(a, u, reply) => {
                let r = self.store.apply(&a, &u);
                if let Ok(p) = &r {
                    tracing::info!(account = %a, max_buy = p.max_buy_mct, min_sell = ?p.min_sell_mct, "preferences updated");
                }
                let _ = reply.send(r);
            }
        }
    }

    async fn bid(&mut self, interval_id: u64) {
        for (account, h) in &self.households {
            let Some(reading) = h.profile.reading(interval_id) else {
                tracing::debug!(%account, interval_id, "no meter reading");
                continue;
            };
            let prefs = self.store.get(account).expect("households are registered");
            let nonce = self.chain.read().expect("chain lock").state().nonce_of(account) + 1;
            let tx = match compose_order(prefs, reading, interval_id, nonce, &h.key) {
                Ok(Some(tx)) => tx,
                Ok(None) => continue,
                Err(e) => {
                    tracing::warn!(%account, interval_id, "no order: {e}");
                    continue;
                }
            };
            let hash = tx.hash();
            let (reply, result) = oneshot::channel();
            if self.submit.send((tx, reply)).await.is_err() {
                return;
            }
            match result.await {
                Ok(Ok(())) => tracing::debug!(%account, interval_id, tx = %hash, "order submitted"),
                Ok(Err(e)) => tracing::warn!(%account, interval_id, "order rejected: {}", e.code()),
                Err(_) => return,
            }
        }
    }
}

/// Start the loop. It bids on every interval id received on `intervals`
/// and stops when that channel closes.
pub fn spawn_agent(
    households: Vec<Household>,
    tariff: TariffConfig,
    chain: SharedChain,
    mut intervals: broadcast::Receiver<u64>,
    submit: Submitter,
) -> (AgentHandle, JoinHandle<()>) {
    let mut store = PreferenceStore::new(tariff);
    let mut kinds = BTreeMap::new();
    let mut by_account = BTreeMap::new();
    for h in households {
        let a = store.register(h.key.public_key(), h.profile.kind);
        kinds.insert(a, h.profile.kind);
        by_account.insert(a, h);
    }
    let (tx, mut rx) = mpsc::channel(64);
    let mut agent = Agent {
        store,
        households: by_account,
        chain,
        submit,
    };
    let task = tokio::spawn(async move {
        let mut commands_open = true;
        loop {
            tokio::select! {
                c = rx.recv(), if commands_open => match c {
                    Some(c) => agent.command(c),
                    None => commands_open = false,
                },
                i = intervals.recv() => match i {
                    Ok(id) => agent.bid(id).await,
                    Err(broadcast::error::RecvError::Lagged(n)) => tracing::warn!("agent skipped {n} intervals"),
                    Err(broadcast::error::RecvError::Closed) => break,
                },
            }
        }
    });
    let handle = AgentHandle {
        commands: tx,
        kinds: Arc::new(kinds),
        tariff,
    };
    (handle, task)
}
