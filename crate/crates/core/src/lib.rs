//! Layered security for agent-initiated online transactions.
//!
//! A transaction passes through multi-factor authentication ([`authn`]), an
//! agent decision ([`policy`]), random-forest fraud screening ([`ads`]) and
//! PBFT replication ([`consensus`] driven by [`netsim`]) before it is
//! appended to a signed, hash-chained [`ledger`]. [`pipeline`] wires the
//! layers together and [`harness`] runs reproducible experiments over them.

pub mod ads;
pub mod authn;
pub mod canonical;
pub mod consensus;
pub mod crypto;
pub mod harness;
mod hexfmt;
pub mod ledger;
pub mod model;
pub mod netsim;
pub mod pipeline;
pub mod policy;
