use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::setup::{generate_principals, Principals, ISSUER_ID};
use super::{read_input, write_json, ExperimentConfig, HarnessError};
use crate::ads::generate_dataset;
use crate::consensus::ConsensusConfig;
use crate::ledger::{
    read_jsonl, verify_ledger_bytes, verify_ledger_bytes_with, ChainViolation, VerifiedSignatures,
};
use crate::model::{PrincipalKind, PrincipalRegistry};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TamperReport {
    pub trials: u64,
    pub detected: u64,
    pub detection_fraction: f64,
    pub ledger_bytes: usize,
    pub blocks: usize,
    pub seed: u64,
    /// Detections by the first violation reported.
    pub by_reason: BTreeMap<String, u64>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct VerifyReport {
    pub blocks: usize,
    pub transactions: usize,
}

fn load_registry(path: &Path) -> Result<PrincipalRegistry, HarnessError> {
    let bytes = read_input(path)?;
    let s = String::from_utf8(bytes)
        .map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))?;
    PrincipalRegistry::from_json(&s)
        .map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))
}

/// Verify a ledger file against a registry file.
pub fn cmd_verify(
    ledger: &Path,
    registry: &Path,
) -> Result<Result<VerifyReport, ChainViolation>, HarnessError> {
    let reg = load_registry(registry)?;
    let bytes = read_input(ledger)?;
    Ok(verify_ledger_bytes(&bytes, &reg).map(|chain| VerifyReport {
        blocks: chain.len(),
        transactions: chain.blocks().iter().map(|b| b.txns.len()).sum(),
    }))
}

/// Flip one random byte of a fresh copy of the ledger per trial and count
/// how often verification notices. Signatures of blocks identical to the
/// original are not re-checked.
pub fn cmd_tamper(
    ledger: &Path,
    registry: &Path,
    trials: u64,
    seed: u64,
) -> Result<TamperReport, HarnessError> {
    if trials == 0 {
        return Err(HarnessError::Config("trials must be positive".into()));
    }
    let reg = load_registry(registry)?;
    let bytes = read_input(ledger)?;
    let invalid =
        |v: ChainViolation| HarnessError::Violation(format!("ledger is already invalid: {v}"));
    let chain = read_jsonl(&bytes).map_err(invalid)?;
    let trusted = VerifiedSignatures::collect(&chain, &reg).map_err(invalid)?;
    let reasons: Vec<Option<String>> = (0..trials)
        .into_par_iter()
        .map(|t| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(t);
            let mut copy = bytes.clone();
            let pos = rng.gen_range(0..copy.len());
            copy[pos] ^= rng.gen_range(1..=255u8);
            verify_ledger_bytes_with(&copy, &reg, &trusted)
                .err()
                .map(|v| v.reason.as_str().to_string())
        })
        .collect();
    let mut by_reason = BTreeMap::new();
    for r in reasons.iter().flatten() {
        *by_reason.entry(r.clone()).or_insert(0) += 1;
    }
    let detected = reasons.iter().filter(|r| r.is_some()).count() as u64;
    Ok(TamperReport {
        trials,
        detected,
        detection_fraction: detected as f64 / trials as f64,
        ledger_bytes: bytes.len(),
        blocks: chain.len(),
        seed,
        by_reason,
    })
}

/// Write `dataset.csv` with the config's size, fraud rate and seed.
pub fn cmd_dataset(config: &ExperimentConfig, out: &Path) -> Result<(usize, usize), HarnessError> {
    let data = generate_dataset(config.n_txns, config.fraud_rate, config.seeds.dataset)?;
    fs::create_dir_all(out)?;
    let mut buf = Vec::new();
    data.write_csv(&mut buf)?;
    fs::write(out.join("dataset.csv"), buf)?;
    Ok((data.len(), data.n_fraud()))
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct KeyRecord {
    pub id: String,
    pub kind: PrincipalKind,
    pub public_key: String,
    pub private_key: String,
}

fn key_records(p: &Principals) -> Vec<KeyRecord> {
    let rec = |id: &str, kind, k: &crate::crypto::KeyPair| KeyRecord {
        id: id.to_string(),
        kind,
        public_key: hex::encode(k.public_key().as_bytes()),
        private_key: hex::encode(k.private_key()),
    };
    let mut out = vec![rec(ISSUER_ID, PrincipalKind::Admin, &p.issuer)];
    out.extend(
        p.replica_ids
            .iter()
            .zip(&p.replicas)
            .map(|(id, k)| rec(id, PrincipalKind::Replica, k)),
    );
    out.extend(
        p.agents
            .iter()
            .map(|(id, k)| rec(id, PrincipalKind::Agent, k)),
    );
    out.extend(
        p.users
            .iter()
            .map(|u| rec(&u.id, PrincipalKind::User, &u.key)),
    );
    out
}

/// Write `keys.json` (key pairs), `registry.json` (public keys) and
/// `enrollment.json` (authentication factors). These are the principals a
/// run with the same config uses; `replicas` overrides `3f + 1`.
pub fn cmd_keygen(
    config: &ExperimentConfig,
    replicas: Option<usize>,
    out: &Path,
) -> Result<Vec<KeyRecord>, HarnessError> {
    let ids = match replicas {
        None => {
            ConsensusConfig::with_default_ids(config.f, config.consensus_timeout_ms).replica_ids
        }
        Some(0) => return Err(HarnessError::Config("need at least one replica".into())),
        Some(n) => (0..n).map(|i| format!("replica-{i}")).collect(),
    };
    let p = generate_principals(&ids, config.n_users, config.n_agents, config.seeds.keys);
    fs::create_dir_all(out)?;
    let records = key_records(&p);
    write_json(&out.join("keys.json"), &records)?;
    fs::write(out.join("registry.json"), p.registry().to_json() + "\n")?;
    p.enrollment().save(&out.join("enrollment.json"))?;
    Ok(records)
}
