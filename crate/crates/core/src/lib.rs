//! Core of a replicated local energy market.

pub mod agent;
pub mod consensus;
pub mod explorer;
pub mod identity;
pub mod ledger;
pub mod market;
pub mod metering;
pub mod node;
pub mod sim;
