use serde::{Deserialize, Serialize};

use crate::identity::{canonical_hash, to_canonical, Address, Hash, KeyPair, PublicKey, Signature};
use crate::market::Side;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OrderPayload {
    pub side: Side,
    pub energy_wh: u64,
    pub limit_price_mct: u64,
    pub interval_id: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Payload {
    Order(OrderPayload),
}

/// A signed request from one account.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Transaction {
    pub sender_pubkey: PublicKey,
    pub sender_address: Address,
    pub payload: Payload,
    pub nonce: u64,
    pub signature: Signature,
}

/// What the signature covers.
#[derive(Serialize)]
struct SignedBody<'a> {
    address: &'a Address,
    nonce: u64,
    payload: &'a Payload,
    pubkey: &'a PublicKey,
}

impl Transaction {
    pub fn new_signed(keypair: &KeyPair, payload: Payload, nonce: u64) -> Self {
        let mut tx = Transaction {
            sender_pubkey: keypair.public_key(),
            sender_address: keypair.address(),
            payload,
            nonce,
            signature: Signature([0u8; 64]),
        };
        tx.signature = keypair.sign_bytes(&tx.signing_bytes());
        tx
    }

    pub fn signing_bytes(&self) -> Vec<u8> {
        to_canonical(&SignedBody {
            address: &self.sender_address,
            nonce: self.nonce,
            payload: &self.payload,
            pubkey: &self.sender_pubkey,
        })
        .expect("transaction body contains only canonical kinds")
    }

    pub fn hash(&self) -> Hash {
        canonical_hash(self).expect("transaction contains only canonical kinds")
    }

    pub fn order(&self) -> &OrderPayload {
        match &self.payload {
            Payload::Order(o) => o,
        }
    }
}
