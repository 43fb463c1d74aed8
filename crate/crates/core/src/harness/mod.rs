//! Experiment harness behind the `txnguard` binary: end-to-end runs,
//! tamper trials, chain verification and artifact generation.

mod run;
mod setup;
mod tools;

use std::collections::BTreeMap;
use std::fs;
use std::io;
use std::path::Path;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ads::{AdsError, ForestParams, DEFAULT_THETA};
use crate::authn::{AuthError, DEFAULT_TAU};
use crate::netsim::{ByzantineBehavior, NetError, Partition};
use crate::pipeline::PipelineError;

pub use run::{cmd_run, run_experiment, Artifacts, MetricsReport, OutcomeCounts, WallClock};
pub use setup::{generate_principals, Principals, Workload, WorkloadItem};
pub use tools::{
    cmd_dataset, cmd_keygen, cmd_tamper, cmd_verify, KeyRecord, TamperReport, VerifyReport,
};

pub const CONFIG_VERSION: u32 = 1;
pub const DEFAULT_SEED: u64 = 2024;

/// Per-purpose seeds. `--seed` replaces all of them with
/// [`Seeds::derive`] of the given value.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Seeds {
    pub dataset: u64,
    pub split: u64,
    pub training: u64,
    pub keys: u64,
    pub workload: u64,
    pub network: u64,
    pub policy: u64,
    pub auth: u64,
}

impl Seeds {
    pub fn derive(master: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(master);
        let mut next = || rng.next_u64();
        Seeds {
            dataset: next(),
            split: next(),
            training: next(),
            keys: next(),
            workload: next(),
            network: next(),
            policy: next(),
            auth: next(),
        }
    }
}

impl Default for Seeds {
    fn default() -> Self {
        Seeds::derive(DEFAULT_SEED)
    }
}

/// Network knobs; the seed comes from [`Seeds::network`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetSettings {
    pub latency_ms: (u64, u64),
    pub drop_prob: f64,
    pub partitions: Vec<Partition>,
    pub byzantine: BTreeMap<String, ByzantineBehavior>,
}

impl Default for NetSettings {
    fn default() -> Self {
        NetSettings {
            latency_ms: (1, 4),
            drop_prob: 0.0,
            partitions: Vec::new(),
            byzantine: BTreeMap::new(),
        }
    }
}

/// Everything that determines a run. Missing keys take their defaults.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub config_version: u32,
    /// Transactions driven through the pipeline.
    pub n_txns: usize,
    pub fraud_rate: f64,
    /// Rows in the training/evaluation corpus. `None` means the workload
    /// rows themselves are split for training and evaluation.
    pub corpus_rows: Option<usize>,
    pub train_fraction: f64,
    pub ads: ForestParams,
    pub theta: f64,
    /// Sample agent actions from the softmax instead of taking the argmax.
    pub sample_decisions: bool,
    pub f: usize,
    pub consensus_timeout_ms: u64,
    /// Event budget per consensus round.
    pub max_steps: u64,
    pub net: NetSettings,
    pub n_users: usize,
    pub n_agents: usize,
    pub tau: f64,
    /// Standard deviation of the noise added to enrolled templates to make
    /// probes.
    pub probe_noise: f64,
    /// Fraction of sessions with one deliberately wrong factor.
    pub invalid_auth_rate: f64,
    pub seeds: Seeds,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            config_version: CONFIG_VERSION,
            n_txns: 10_000,
            fraud_rate: 0.10,
            corpus_rows: None,
            train_fraction: 0.8,
            ads: ForestParams::default(),
            theta: DEFAULT_THETA,
            sample_decisions: false,
            f: 1,
            consensus_timeout_ms: 200,
            max_steps: 100_000,
            net: NetSettings::default(),
            n_users: 100,
            n_agents: 10,
            tau: DEFAULT_TAU,
            probe_noise: 0.02,
            invalid_auth_rate: 0.0,
            seeds: Seeds::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_json(s: &str) -> Result<Self, HarnessError> {
        let c: Self = serde_json::from_str(s).map_err(|e| HarnessError::Config(e.to_string()))?;
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let s = fs::read_to_string(path)
            .map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))?;
        Self::from_json(&s)
    }

    /// Load `path` if given, else the defaults; then apply `seed`.
    pub fn resolve(path: Option<&Path>, seed: Option<u64>) -> Result<Self, HarnessError> {
        let mut c = match path {
            Some(p) => Self::load(p)?,
            None => Self::default(),
        };
        if let Some(s) = seed {
            c.seeds = Seeds::derive(s);
        }
        Ok(c)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |m: String| Err(HarnessError::Config(m));
        if self.config_version != CONFIG_VERSION {
            return bad(format!(
                "config_version {} is not supported (expected {CONFIG_VERSION})",
                self.config_version
            ));
        }
        if self.n_txns == 0 {
            return bad("n_txns must be positive".into());
        }
        for (name, v) in [
            ("fraud_rate", self.fraud_rate),
            ("invalid_auth_rate", self.invalid_auth_rate),
            ("theta", self.theta),
            ("tau", self.tau),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return bad(format!("{name} = {v} is outside [0, 1]"));
            }
        }
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return bad(format!(
                "train_fraction = {} must be strictly between 0 and 1",
                self.train_fraction
            ));
        }
        if !(self.probe_noise >= 0.0 && self.probe_noise.is_finite()) {
            return bad(format!(
                "probe_noise = {} must be non-negative",
                self.probe_noise
            ));
        }
        if self.n_users < 2 || self.n_agents == 0 {
            return bad("need at least two users and one agent".into());
        }
        if self.f == 0 {
            return bad("f must be at least 1".into());
        }
        if self.consensus_timeout_ms == 0 || self.max_steps == 0 {
            return bad("consensus_timeout_ms and max_steps must be positive".into());
        }
        if self.ads.n_trees == 0 {
            return bad("ads.n_trees must be positive".into());
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("invalid config: {0}")]
    Config(String),
    #[error("cannot read {path}: {source}")]
    Input { path: String, source: io::Error },
    #[error("ledger violation: {0}")]
    Violation(String),
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
    #[error(transparent)]
    Ads(#[from] AdsError),
    #[error(transparent)]
    Auth(#[from] AuthError),
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl HarnessError {
    /// 1 for verification failures, 2 for bad input.
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Config(_) | HarnessError::Input { .. } => 2,
            _ => 1,
        }
    }
}

fn read_input(path: &Path) -> Result<Vec<u8>, HarnessError> {
    fs::read(path).map_err(|source| HarnessError::Input {
        path: path.display().to_string(),
        source,
    })
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), HarnessError> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    fs::write(path, s)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip() {
        let c = ExperimentConfig::default();
        assert_eq!(c.n_txns, 10_000);
        assert_eq!(c.fraud_rate, 0.10);
        assert_eq!(c.f, 1);
        assert_eq!(ExperimentConfig::from_json(&c.to_json()).unwrap(), c);
        assert_eq!(ExperimentConfig::from_json("{}").unwrap(), c);
    }

    #[test]
    fn rejects_bad_configs() {
        for s in [
            r#"{"config_version": 2}"#,
            r#"{"n_txns": 0}"#,
            r#"{"fraud_rate": 1.5}"#,
            r#"{"train_fraction": 1.0}"#,
            r#"{"unknown_key": 1}"#,
            r#"{"n_users": 1}"#,
            "not json",
        ] {
            let e = ExperimentConfig::from_json(s).unwrap_err();
            assert_eq!(e.exit_code(), 2, "{s}");
        }
    }

    #[test]
    fn seed_derivation() {
        assert_eq!(Seeds::derive(5), Seeds::derive(5));
        assert_ne!(Seeds::derive(5), Seeds::derive(6));
        let s = Seeds::derive(1);
        assert_ne!(s.dataset, s.training);
        let c = ExperimentConfig::resolve(None, Some(9)).unwrap();
        assert_eq!(c.seeds, Seeds::derive(9));
    }
}
