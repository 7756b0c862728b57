//! BFT replication among validators with equal voting power.

mod engine;
mod message;
mod validators;

pub use engine::{
    Application, ConsensusConfig, ConsensusEngine, EngineStats, Input, Output, RoundState, Step, TimeoutEvent,
};
pub use message::{CommitCertificate, ConsensusMessage, MessageKind, VoteTarget, WireMessage};
pub use validators::{quorum_reached, Validator, ValidatorSet};

use crate::identity::Address;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ConsensusError {
    #[error("validator set is empty")]
    EmptyValidatorSet,
    #[error("validator {0} listed twice")]
    DuplicateValidator(Address),
    #[error("validator {0}: address does not derive from its public key")]
    ValidatorKeyMismatch(Address),
}
