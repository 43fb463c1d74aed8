//! PBFT replication as a message-driven state machine.
//!
//! A [`Replica`] never performs I/O. Each entry point takes the current
//! simulated time and returns the messages to broadcast to every other
//! replica plus any `(seq, digest)` pairs it executed. The driver (see
//! [`crate::netsim`]) owns delivery and timers.

mod message;
mod replica;

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

pub use message::{ConsensusMessage, MessageKind, PreparedProof};
pub use replica::{AuditEntry, AuditReason, Output, Replica};

/// Replicas needed to tolerate `f` Byzantine faults.
pub fn required_nodes(f: usize) -> usize {
    3 * f + 1
}

pub fn quorum_size(config: &ConsensusConfig) -> usize {
    2 * config.f + 1
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ConsensusError {
    #[error("invalid consensus config: {0}")]
    InvalidConfig(String),
    #[error("not primary")]
    NotPrimary,
    #[error("view change in progress")]
    ViewChangeInProgress,
    #[error("unknown replica {0}")]
    UnknownReplica(String),
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConsensusConfig {
    pub f: usize,
    pub replica_ids: Vec<String>,
    /// Initial view-change timeout, simulated ms. Doubles on each
    /// consecutive view change up to [`ConsensusConfig::MAX_BACKOFF`] times.
    pub timeout_ms: u64,
}

impl ConsensusConfig {
    pub const MAX_BACKOFF: u64 = 64;

    pub fn new(
        f: usize,
        replica_ids: Vec<String>,
        timeout_ms: u64,
    ) -> Result<Self, ConsensusError> {
        let c = ConsensusConfig {
            f,
            replica_ids,
            timeout_ms,
        };
        c.validate()?;
        Ok(c)
    }

    /// Ids `replica-0` .. `replica-{3f}`.
    pub fn with_default_ids(f: usize, timeout_ms: u64) -> Self {
        let ids = (0..required_nodes(f))
            .map(|i| format!("replica-{i}"))
            .collect();
        ConsensusConfig::new(f, ids, timeout_ms).expect("generated ids are valid")
    }

    pub fn validate(&self) -> Result<(), ConsensusError> {
        let n = required_nodes(self.f);
        if self.replica_ids.len() != n {
            return Err(ConsensusError::InvalidConfig(format!(
                "f = {} needs {n} replicas, got {}",
                self.f,
                self.replica_ids.len()
            )));
        }
        let distinct: BTreeSet<&String> = self.replica_ids.iter().collect();
        if distinct.len() != n || self.replica_ids.iter().any(String::is_empty) {
            return Err(ConsensusError::InvalidConfig(
                "replica ids must be distinct and non-empty".into(),
            ));
        }
        if self.timeout_ms == 0 {
            return Err(ConsensusError::InvalidConfig(
                "timeout must be positive".into(),
            ));
        }
        Ok(())
    }

    pub fn n(&self) -> usize {
        self.replica_ids.len()
    }

    pub fn quorum(&self) -> usize {
        quorum_size(self)
    }

    pub fn primary_of(&self, view: u64) -> &str {
        &self.replica_ids[(view % self.n() as u64) as usize]
    }

    pub fn contains(&self, id: &str) -> bool {
        self.replica_ids.iter().any(|r| r == id)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn node_and_quorum_arithmetic() {
        assert_eq!(required_nodes(0), 1);
        assert_eq!(required_nodes(1), 4);
        assert_eq!(required_nodes(2), 7);
        for (f, q) in [(0, 1), (1, 3), (2, 5)] {
            assert_eq!(ConsensusConfig::with_default_ids(f, 10).quorum(), q);
        }
        for f in 0..50 {
            let n = required_nodes(f) as f64;
            assert!((2 * f + 1) as f64 > 2.0 / 3.0 * n - 1.0);
            assert!((2 * f + 1) as f64 >= 2.0 / 3.0 * n);
        }
    }

    #[test]
    fn config_validation() {
        let ids = |n: usize| (0..n).map(|i| format!("r{i}")).collect::<Vec<_>>();
        assert!(ConsensusConfig::new(1, ids(4), 10).is_ok());
        assert!(ConsensusConfig::new(1, ids(3), 10).is_err());
        assert!(ConsensusConfig::new(1, vec!["a".into(); 4], 10).is_err());
        assert!(ConsensusConfig::new(1, ids(4), 0).is_err());
        let c = ConsensusConfig::new(1, ids(4), 10).unwrap();
        assert_eq!(c.primary_of(0), "r0");
        assert_eq!(c.primary_of(5), "r1");
    }
}
