use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use super::ValidatorSet;
use crate::identity::{to_canonical, Address, Hash, KeyPair, Signature, SignatureVerifier};
use crate::ledger::{Block, Transaction};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum MessageKind {
    Proposal,
    Prevote,
    Precommit,
}

/// What a vote is for. Renders as a block hash or the string `NIL`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum VoteTarget {
    Nil,
    Block(Hash),
}

impl fmt::Display for VoteTarget {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            VoteTarget::Nil => f.write_str("NIL"),
            VoteTarget::Block(h) => write!(f, "{h}"),
        }
    }
}

impl FromStr for VoteTarget {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s == "NIL" {
            Ok(VoteTarget::Nil)
        } else {
            s.parse().map(VoteTarget::Block).map_err(|e| e.to_string())
        }
    }
}

impl Serialize for VoteTarget {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for VoteTarget {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        String::deserialize(deserializer)?.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConsensusMessage {
    pub kind: MessageKind,
    pub height: u64,
    pub round: u32,
    pub block_hash: VoteTarget,
    pub sender: Address,
    pub signature: Signature,
    /// Carried by proposals only; bound to `block_hash`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub block: Option<Block>,
}

#[derive(Serialize)]
struct SignedVote<'a> {
    block_hash: &'a VoteTarget,
    height: u64,
    kind: MessageKind,
    round: u32,
    sender: &'a Address,
}

impl ConsensusMessage {
    pub fn signing_bytes(&self) -> Vec<u8> {
        to_canonical(&SignedVote {
            block_hash: &self.block_hash,
            height: self.height,
            kind: self.kind,
            round: self.round,
            sender: &self.sender,
        })
        .expect("vote body is canonical")
    }

    pub fn new_signed(
        key: &KeyPair,
        kind: MessageKind,
        height: u64,
        round: u32,
        block_hash: VoteTarget,
        block: Option<Block>,
    ) -> Self {
        let mut m = ConsensusMessage {
            kind,
            height,
            round,
            block_hash,
            sender: key.address(),
            signature: Signature([0u8; 64]),
            block,
        };
        m.signature = key.sign_bytes(&m.signing_bytes());
        m
    }

    /// Sender is a validator, signature is valid, and a proposal's block
    /// matches its hash and height.
    pub fn is_authentic(&self, set: &ValidatorSet, verifier: &dyn SignatureVerifier) -> bool {
        let Some(v) = set.get(&self.sender) else {
            return false;
        };
        if self.kind == MessageKind::Proposal {
            match (&self.block, self.block_hash) {
                (Some(b), VoteTarget::Block(h)) if b.hash() == h && b.height == self.height => {}
                _ => return false,
            }
        } else if self.block.is_some() {
            return false;
        }
        verifier.verify_bytes(&v.pubkey, &self.signing_bytes(), &self.signature)
    }
}

/// A block plus the precommits that committed it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CommitCertificate {
    pub block: Block,
    pub precommits: Vec<ConsensusMessage>,
}

impl CommitCertificate {
    pub fn height(&self) -> u64 {
        self.block.height
    }

    /// A quorum of distinct validators precommitted this block in one round.
    pub fn verify(&self, set: &ValidatorSet, verifier: &dyn SignatureVerifier) -> bool {
        let target = VoteTarget::Block(self.block.hash());
        let Some(round) = self.precommits.first().map(|m| m.round) else {
            return false;
        };
        let mut voters = std::collections::BTreeSet::new();
        for m in &self.precommits {
            if m.kind != MessageKind::Precommit
                || m.height != self.block.height
                || m.round != round
                || m.block_hash != target
                || !m.is_authentic(set, verifier)
            {
                return false;
            }
            voters.insert(m.sender);
        }
        set.is_quorum(voters.len() as u64)
    }
}

/// Everything nodes exchange.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum WireMessage {
    Consensus(ConsensusMessage),
    Tx(Transaction),
    Commit(CommitCertificate),
    /// First frame on a TCP connection. Peers on another chain are refused.
    Hello { address: Address, genesis_hash: Hash },
    /// Ask a peer for the commit certificates from `from_height` on.
    SyncRequest { from_height: u64 },
}
