//! Escrowed data marketplace: buyers post signed data orders, sellers answer
//! with salted-hash commitments, notaries audit deliveries against ground
//! truth, and a deterministic ledger releases escrow on notary certificates.

pub mod actors;
pub mod codec;
pub mod crypto;
pub mod ledger;
pub mod messages;
pub mod scenario;
pub mod transport;
