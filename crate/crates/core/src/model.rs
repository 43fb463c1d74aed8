//! Shared domain types: transactions, principals, the principal registry and
//! the simulated clock.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::canonical;
use crate::crypto::PublicKey;
use crate::hexfmt;

/// 16-byte transaction identifier.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TxnId(#[serde(with = "hexfmt")] pub [u8; 16]);

impl TxnId {
    pub fn from_u128(v: u128) -> Self {
        TxnId(v.to_be_bytes())
    }

    pub fn to_hex(&self) -> String {
        hexfmt::encode(&self.0)
    }
}

impl fmt::Debug for TxnId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "TxnId({})", self.to_hex())
    }
}

impl fmt::Display for TxnId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

/// 8-byte anti-replay value carried by every transaction.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Debug, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Nonce(#[serde(with = "hexfmt")] pub [u8; 8]);

/// Currency amount in integer cents. Negative values are representable so
/// that validation can report them.
#[derive(
    Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Debug, Default, Serialize, Deserialize,
)]
#[serde(transparent)]
pub struct Amount(pub i64);

impl Amount {
    pub fn from_cents(cents: i64) -> Self {
        Amount(cents)
    }

    /// Round a value in currency units to the nearest cent.
    pub fn from_units(units: f64) -> Self {
        Amount((units * 100.0).round() as i64)
    }

    pub fn cents(&self) -> i64 {
        self.0
    }

    pub fn as_units(&self) -> f64 {
        self.0 as f64 / 100.0
    }
}

impl fmt::Display for Amount {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let sign = if self.0 < 0 { "-" } else { "" };
        let abs = self.0.unsigned_abs();
        write!(f, "{sign}{}.{:02}", abs / 100, abs % 100)
    }
}

pub const MICRO_DEGREES: f64 = 1_000_000.0;

/// A coordinate stored as integer micro-degrees.
#[derive(
    Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Debug, Default, Serialize, Deserialize,
)]
#[serde(deny_unknown_fields)]
pub struct GeoPoint {
    /// Latitude in micro-degrees, valid range ±90°.
    pub lat: i64,
    /// Longitude in micro-degrees, valid range ±180°.
    pub lon: i64,
}

impl GeoPoint {
    pub fn from_degrees(lat: f64, lon: f64) -> Self {
        GeoPoint {
            lat: (lat * MICRO_DEGREES).round() as i64,
            lon: (lon * MICRO_DEGREES).round() as i64,
        }
    }

    pub fn lat_degrees(&self) -> f64 {
        self.lat as f64 / MICRO_DEGREES
    }

    pub fn lon_degrees(&self) -> f64 {
        self.lon as f64 / MICRO_DEGREES
    }
}

/// The unit of value transfer initiated by a robot agent.
#[derive(Clone, PartialEq, Eq, Hash, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Transaction {
    pub txn_id: TxnId,
    pub sender_id: String,
    pub receiver_id: String,
    pub agent_id: String,
    pub amount: Amount,
    /// Simulated epoch milliseconds.
    pub timestamp: u64,
    pub location: GeoPoint,
    pub nonce: Nonce,
}

impl Transaction {
    /// Canonical bytes used as the hashing preimage. See the README for the
    /// exact layout.
    pub fn canonical_encode(&self) -> Vec<u8> {
        canonical::to_canonical_bytes(self).expect("transactions contain no floats")
    }

    /// Parse canonical bytes back into a transaction.
    pub fn from_canonical(bytes: &[u8]) -> Result<Self, serde_json::Error> {
        serde_json::from_slice(bytes)
    }
}

#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Debug, Serialize, Deserialize)]
pub enum PrincipalKind {
    User,
    Agent,
    Replica,
    Admin,
}

#[derive(Clone, PartialEq, Eq, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Principal {
    pub id: String,
    pub kind: PrincipalKind,
    pub public_key: PublicKey,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum RegistryError {
    #[error("principal id must be non-empty")]
    EmptyId,
    #[error("principal {0} is already registered")]
    Duplicate(String),
}

/// Append-only set of known principals.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct PrincipalRegistry {
    principals: BTreeMap<String, Principal>,
}

impl PrincipalRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register(&mut self, principal: Principal) -> Result<(), RegistryError> {
        if principal.id.is_empty() {
            return Err(RegistryError::EmptyId);
        }
        if self.principals.contains_key(&principal.id) {
            return Err(RegistryError::Duplicate(principal.id));
        }
        self.principals.insert(principal.id.clone(), principal);
        Ok(())
    }

    pub fn get(&self, id: &str) -> Option<&Principal> {
        self.principals.get(id)
    }

    pub fn contains(&self, id: &str) -> bool {
        self.principals.contains_key(id)
    }

    pub fn len(&self) -> usize {
        self.principals.len()
    }

    pub fn is_empty(&self) -> bool {
        self.principals.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Principal> {
        self.principals.values()
    }

    pub fn to_json(&self) -> String {
        let list: Vec<&Principal> = self.principals.values().collect();
        serde_json::to_string_pretty(&list).expect("registry serializes")
    }

    pub fn from_json(s: &str) -> Result<Self, RegistryLoadError> {
        let list: Vec<Principal> = serde_json::from_str(s)?;
        let mut reg = Self::new();
        for p in list {
            reg.register(p)?;
        }
        Ok(reg)
    }
}

#[derive(Debug, Error)]
pub enum RegistryLoadError {
    #[error("registry file is not valid JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Registry(#[from] RegistryError),
}

/// A broken transaction invariant.
#[derive(Clone, PartialEq, Eq, Debug)]
pub enum Violation {
    NegativeAmount,
    UnknownPrincipal(String),
    LatitudeOutOfRange,
    LongitudeOutOfRange,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::NegativeAmount => f.write_str("negative amount"),
            Violation::UnknownPrincipal(id) => write!(f, "unknown principal: {id}"),
            Violation::LatitudeOutOfRange => f.write_str("latitude out of range"),
            Violation::LongitudeOutOfRange => f.write_str("longitude out of range"),
        }
    }
}

impl Violation {
    /// Short machine-readable code.
    pub fn code(&self) -> &'static str {
        match self {
            Violation::NegativeAmount => "negative amount",
            Violation::UnknownPrincipal(_) => "unknown principal",
            Violation::LatitudeOutOfRange => "latitude out of range",
            Violation::LongitudeOutOfRange => "longitude out of range",
        }
    }
}

/// Report every invariant `txn` breaks. An empty list means the
/// transaction is valid.
pub fn validate_transaction(txn: &Transaction, registry: &PrincipalRegistry) -> Vec<Violation> {
    let mut out = Vec::new();
    if txn.amount.0 < 0 {
        out.push(Violation::NegativeAmount);
    }
    for id in [&txn.sender_id, &txn.receiver_id, &txn.agent_id] {
        if !registry.contains(id) {
            out.push(Violation::UnknownPrincipal(id.clone()));
        }
    }
    if txn.location.lat.abs() > 90_000_000 {
        out.push(Violation::LatitudeOutOfRange);
    }
    if txn.location.lon.abs() > 180_000_000 {
        out.push(Violation::LongitudeOutOfRange);
    }
    out
}

#[derive(Debug, Error, PartialEq, Eq)]
#[error("clock cannot move backward from {now} to {requested}")]
pub struct ClockError {
    pub now: u64,
    pub requested: u64,
}

/// Simulated time in milliseconds. Never moves backward.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct SimClock {
    now: u64,
}

impl SimClock {
    pub fn new(start_ms: u64) -> Self {
        SimClock { now: start_ms }
    }

    pub fn now(&self) -> u64 {
        self.now
    }

    pub fn advance_by(&mut self, ms: u64) -> u64 {
        self.now = self.now.saturating_add(ms);
        self.now
    }

    pub fn advance_to(&mut self, t: u64) -> Result<u64, ClockError> {
        if t < self.now {
            return Err(ClockError {
                now: self.now,
                requested: t,
            });
        }
        self.now = t;
        Ok(t)
    }

    /// Move to `t` if it is in the future; otherwise stay put.
    pub fn catch_up(&mut self, t: u64) -> u64 {
        self.now = self.now.max(t);
        self.now
    }
}

#[cfg(test)]
pub(crate) mod testutil {
    use super::*;
    use rand::Rng;

    pub fn random_txn<R: Rng>(rng: &mut R) -> Transaction {
        let ids = ["alice", "bob", "carol", "dave", "merchant-7", "ünïcode\"q"];
        Transaction {
            txn_id: TxnId(rng.gen()),
            sender_id: ids[rng.gen_range(0..ids.len())].to_string(),
            receiver_id: ids[rng.gen_range(0..ids.len())].to_string(),
            agent_id: format!("agent-{}", rng.gen_range(0..50)),
            amount: Amount(rng.gen_range(0..10_000_000)),
            timestamp: rng.gen_range(0..4_000_000_000_000),
            location: GeoPoint {
                lat: rng.gen_range(-90_000_000..=90_000_000),
                lon: rng.gen_range(-180_000_000..=180_000_000),
            },
            nonce: Nonce(rng.gen()),
        }
    }
}
