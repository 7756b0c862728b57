use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{clamp_limits, AgentError};
use crate::identity::{derive_address, to_canonical, verify_bytes, Address, KeyPair, PublicKey, Signature};
use crate::market::TariffConfig;
use crate::metering::HouseholdKind;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PricePreferences {
    pub account: Address,
    pub max_buy_mct: u64,
    /// `None` for consumers.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub min_sell_mct: Option<u64>,
    /// Client-chosen counter, usually unix seconds; must increase per update.
    pub updated_at: u64,
}

impl PricePreferences {
    /// Buy at up to retail, sell at no less than feed-in: the same outcome
    /// as having no local market.
    pub fn passive(account: Address, kind: HouseholdKind, tariff: &TariffConfig, updated_at: u64) -> Self {
        Self {
            account,
            max_buy_mct: tariff.ceiling(),
            min_sell_mct: (kind == HouseholdKind::Prosumer).then(|| tariff.floor()),
            updated_at,
        }
    }

    pub fn clamped(
        account: Address,
        raw_buy: u64,
        raw_sell: Option<u64>,
        tariff: &TariffConfig,
        updated_at: u64,
    ) -> Self {
        let (max_buy_mct, min_sell_mct) = clamp_limits(raw_buy, raw_sell, tariff);
        Self {
            account,
            max_buy_mct,
            min_sell_mct,
            updated_at,
        }
    }
}

/// Body of `POST /agent/{address}/preferences`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PreferenceUpdate {
    pub max_buy_mct: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub min_sell_mct: Option<u64>,
    pub updated_at: u64,
    pub signature: Signature,
}

#[derive(Serialize)]
struct SignedPreferences<'a> {
    account: &'a Address,
    max_buy_mct: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    min_sell_mct: Option<u64>,
    updated_at: u64,
}

impl PreferenceUpdate {
    pub fn signing_bytes(account: &Address, max_buy_mct: u64, min_sell_mct: Option<u64>, updated_at: u64) -> Vec<u8> {
        to_canonical(&SignedPreferences {
            account,
            max_buy_mct,
            min_sell_mct,
            updated_at,
        })
        .expect("preference body is canonical")
    }

    pub fn new_signed(key: &KeyPair, max_buy_mct: u64, min_sell_mct: Option<u64>, updated_at: u64) -> Self {
        let bytes = Self::signing_bytes(&key.address(), max_buy_mct, min_sell_mct, updated_at);
        Self {
            max_buy_mct,
            min_sell_mct,
            updated_at,
            signature: key.sign_bytes(&bytes),
        }
    }
}

#[derive(Debug, Clone)]
struct Entry {
    pubkey: PublicKey,
    kind: HouseholdKind,
    prefs: PricePreferences,
}

/// Preferences of the households an agent serves. Kept off-chain.
#[derive(Debug, Clone, Default)]
pub struct PreferenceStore {
    tariff: TariffConfig,
    entries: BTreeMap<Address, Entry>,
}

impl PreferenceStore {
    pub fn new(tariff: TariffConfig) -> Self {
        Self {
            tariff,
            entries: BTreeMap::new(),
        }
    }

    /// Register a household with passive defaults. Returns its address.
    pub fn register(&mut self, pubkey: PublicKey, kind: HouseholdKind) -> Address {
        let account = derive_address(&pubkey).expect("registered keys are valid points");
        let prefs = PricePreferences::passive(account, kind, &self.tariff, 0);
        self.entries.insert(account, Entry { pubkey, kind, prefs });
        account
    }

    pub fn get(&self, account: &Address) -> Option<&PricePreferences> {
        self.entries.get(account).map(|e| &e.prefs)
    }

    pub fn kind(&self, account: &Address) -> Option<HouseholdKind> {
        self.entries.get(account).map(|e| e.kind)
    }

    pub fn accounts(&self) -> impl Iterator<Item = &Address> {
        self.entries.keys()
    }

    /// Authenticate, clamp and store. Returns what was stored.
    pub fn apply(&mut self, account: &Address, update: &PreferenceUpdate) -> Result<PricePreferences, AgentError> {
        let entry = self.entries.get_mut(account).ok_or(AgentError::UnknownAccount)?;
        let bytes = PreferenceUpdate::signing_bytes(account, update.max_buy_mct, update.min_sell_mct, update.updated_at);
        if !verify_bytes(&entry.pubkey, &bytes, &update.signature) {
            return Err(AgentError::BadSignature);
        }
        if entry.kind == HouseholdKind::Consumer && update.min_sell_mct.is_some() {
            return Err(AgentError::SellLimitForConsumer);
        }
        if update.updated_at <= entry.prefs.updated_at {
            return Err(AgentError::StaleUpdate {
                stored: entry.prefs.updated_at,
                got: update.updated_at,
            });
        }
        // A prosumer omitting the sell limit keeps the current one.
        let sell = update.min_sell_mct.or(entry.prefs.min_sell_mct);
        entry.prefs = PricePreferences::clamped(*account, update.max_buy_mct, sell, &self.tariff, update.updated_at);
        Ok(entry.prefs.clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn update_flow() {
        let t = TariffConfig::default();
        let mut store = PreferenceStore::new(t);
        let pro = KeyPair::from_label("pro");
        let con = KeyPair::from_label("con");
        let a = store.register(pro.public_key(), HouseholdKind::Prosumer);
        let c = store.register(con.public_key(), HouseholdKind::Consumer);
        assert_eq!(store.get(&a).unwrap().min_sell_mct, Some(4000));
        assert_eq!(store.get(&c).unwrap().min_sell_mct, None);

        let up = PreferenceUpdate::new_signed(&pro, 12_000, Some(6000), 5);
        let stored = store.apply(&a, &up).unwrap();
        assert_eq!((stored.max_buy_mct, stored.min_sell_mct, stored.updated_at), (8000, Some(6000), 5));

        assert_eq!(store.apply(&a, &up), Err(AgentError::StaleUpdate { stored: 5, got: 5 }));
        let forged = PreferenceUpdate::new_signed(&con, 5000, Some(5000), 9);
        assert_eq!(store.apply(&a, &forged), Err(AgentError::BadSignature));
        let mut tampered = PreferenceUpdate::new_signed(&pro, 5000, Some(5000), 9);
        tampered.max_buy_mct = 7000;
        assert_eq!(store.apply(&a, &tampered), Err(AgentError::BadSignature));

        let sell = PreferenceUpdate::new_signed(&con, 5000, Some(5000), 1);
        assert_eq!(store.apply(&c, &sell), Err(AgentError::SellLimitForConsumer));
        let ok = PreferenceUpdate::new_signed(&con, 5000, None, 1);
        assert_eq!(store.apply(&c, &ok).unwrap().max_buy_mct, 5000);

        let keep = PreferenceUpdate::new_signed(&pro, 7000, None, 6);
        assert_eq!(store.apply(&a, &keep).unwrap().min_sell_mct, Some(6000));
        assert_eq!(store.apply(&Address([0; 32]), &keep), Err(AgentError::UnknownAccount));
    }

    #[test]
    fn update_body_shape() {
        let up = PreferenceUpdate::new_signed(&KeyPair::from_label("x"), 7000, None, 3);
        let json = serde_json::to_value(&up).unwrap();
        let keys: Vec<&String> = json.as_object().unwrap().keys().collect();
        assert_eq!(keys, ["max_buy_mct", "signature", "updated_at"]);
    }
}
