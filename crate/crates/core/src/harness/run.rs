use std::collections::BTreeSet;
use std::fs;
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::setup::{generate_principals, Principals, Workload};
use super::{write_json, ExperimentConfig, HarnessError};
use crate::ads::{
    evaluate, fraud_count, generate_dataset, generate_with_fraud_count, train_forest, EvalReport,
    ForestModel, LabeledDataset,
};
use crate::authn::{AuthConfig, Authenticator};
use crate::consensus::ConsensusConfig;
use crate::ledger::{hash_txn, to_jsonl, verify_chain, Chain};
use crate::model::PrincipalRegistry;
use crate::netsim::{NetConfig, Simulation};
use crate::pipeline::{self, Alert, Pipeline, PipelineConfig, TerminalState, TxnOutcome};
use crate::policy::{DecisionMode, PolicyWeights};

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct OutcomeCounts {
    pub committed: usize,
    pub rejected_auth: usize,
    pub denied_by_agent: usize,
    pub held: usize,
    pub rejected_after_hold: usize,
    pub committed_after_hold: usize,
}

impl OutcomeCounts {
    fn add(&mut self, s: &TerminalState) {
        *match s {
            TerminalState::Committed { .. } => &mut self.committed,
            TerminalState::RejectedAuth { .. } => &mut self.rejected_auth,
            TerminalState::DeniedByAgent => &mut self.denied_by_agent,
            TerminalState::Held { .. } => &mut self.held,
            TerminalState::RejectedAfterHold { .. } => &mut self.rejected_after_hold,
            TerminalState::CommittedAfterHold { .. } => &mut self.committed_after_hold,
        } += 1;
    }

    pub fn total(&self) -> usize {
        self.committed
            + self.rejected_auth
            + self.denied_by_agent
            + self.held
            + self.rejected_after_hold
            + self.committed_after_hold
    }
}

/// Host-dependent measurements, kept apart from the deterministic part of
/// the report.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct WallClock {
    pub training_s: f64,
    /// Time spent driving the workload through the pipeline.
    pub processing_s: f64,
    /// Committed transactions per second of processing time.
    pub throughput_tps: f64,
    /// Per committed transaction, from receipt to ledger append.
    pub mean_validation_latency_s: f64,
    pub p95_validation_latency_s: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConsensusStats {
    pub replicas: usize,
    pub proposals: u64,
    pub messages_delivered: u64,
    pub view_changes: u64,
    pub final_sim_time_ms: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub config_version: u32,
    pub n_txns: usize,
    pub n_fraud_labeled: usize,
    /// Held-out accuracy of the screening model.
    pub fraud_detection_accuracy: f64,
    pub evaluation: EvalReport,
    /// Percentage of committed transactions found intact in the verified
    /// chain.
    pub transaction_integrity_pct: f64,
    pub ledger_verified: bool,
    pub chain_length: usize,
    /// Authenticated sessions over all sessions.
    pub auth_success_rate: f64,
    /// Simulated seconds from consensus start to commit.
    pub mean_validation_latency_s: f64,
    pub p95_validation_latency_s: f64,
    /// Fraud-labeled transactions kept out of the ledger.
    pub blocked_fraud_fraction: f64,
    pub committed_fraud: usize,
    /// Legitimate transactions that were held.
    pub held_legit: usize,
    pub alerts: usize,
    pub counts: OutcomeCounts,
    pub consensus: ConsensusStats,
    pub wall_clock: WallClock,
}

impl MetricsReport {
    /// The report as JSON with the wall-clock section removed.
    pub fn deterministic_json(&self) -> String {
        let mut v = serde_json::to_value(self).expect("report serializes");
        v.as_object_mut().expect("object").remove("wall_clock");
        serde_json::to_string_pretty(&v).expect("report serializes")
    }

    /// Flat `metric,value` rows.
    pub fn csv_rows(&self) -> Vec<(String, String)> {
        let mut rows = Vec::new();
        flatten(
            "",
            &serde_json::to_value(self).expect("report serializes"),
            &mut rows,
        );
        rows
    }
}

fn flatten(prefix: &str, v: &serde_json::Value, out: &mut Vec<(String, String)>) {
    match v {
        serde_json::Value::Object(m) => {
            for (k, x) in m {
                let key = if prefix.is_empty() {
                    k.clone()
                } else {
                    format!("{prefix}.{k}")
                };
                flatten(&key, x, out);
            }
        }
        other => out.push((prefix.to_string(), other.to_string())),
    }
}

/// Nearest-rank percentile of unsorted values.
fn percentile(values: &[f64], p: f64) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let rank = ((p * v.len() as f64).ceil() as usize).clamp(1, v.len());
    v[rank - 1]
}

fn mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        0.0
    } else {
        values.iter().sum::<f64>() / values.len() as f64
    }
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Everything a run produces.
pub struct Artifacts {
    pub report: MetricsReport,
    pub corpus: LabeledDataset,
    pub model: ForestModel,
    pub registry: PrincipalRegistry,
    pub chain: Chain,
    pub outcomes: Vec<TxnOutcome>,
    pub labels: Vec<bool>,
    pub alerts: Vec<Alert>,
    pub held: pipeline::HeldStore,
}

/// Generate data, train, enroll, drive the workload and check the ledger
/// gate. Fails if consensus stalls or the ledger disagrees with the
/// outcomes.
pub fn run_experiment(config: &ExperimentConfig) -> Result<Artifacts, HarnessError> {
    config.validate()?;
    let s = config.seeds;
    let (corpus, workload_rows) = match config.corpus_rows {
        None => {
            let d = generate_dataset(config.n_txns, config.fraud_rate, s.dataset)?;
            (d.clone(), d)
        }
        Some(m) => (
            generate_dataset(m, config.fraud_rate, s.dataset)?,
            generate_with_fraud_count(
                config.n_txns,
                fraud_count(config.n_txns, config.fraud_rate),
                s.workload,
            )?,
        ),
    };
    let (train, test) = corpus.split(config.train_fraction, s.split);
    let t0 = Instant::now();
    let model = train_forest(&train, config.ads, s.training)?;
    let training_s = t0.elapsed().as_secs_f64();
    let evaluation = evaluate(&model, &test, config.theta)?;

    let consensus = ConsensusConfig::with_default_ids(config.f, config.consensus_timeout_ms);
    let principals = generate_principals(
        &consensus.replica_ids,
        config.n_users,
        config.n_agents,
        s.keys,
    );
    let registry = principals.registry();
    let net = NetConfig {
        seed: s.network,
        latency_ms: config.net.latency_ms,
        drop_prob: config.net.drop_prob,
        partitions: config.net.partitions.clone(),
        byzantine: config.net.byzantine.clone(),
    };
    let sim = Simulation::new(consensus, net, principals.replicas.clone())?;
    let auth = Authenticator::new(
        principals.enrollment(),
        AuthConfig {
            tau: config.tau,
            ..AuthConfig::default()
        },
        s.auth,
    );
    let pcfg = PipelineConfig {
        theta: config.theta,
        decision: DecisionMode::Argmax,
        max_steps: config.max_steps,
    };
    let mut pipe = Pipeline::new(
        pcfg,
        registry.clone(),
        auth,
        PolicyWeights::standard(),
        model.clone(),
        sim,
    );
    let workload = Workload::build(
        &workload_rows,
        &principals,
        config.probe_noise,
        config.invalid_auth_rate,
        s.workload,
    );

    let mut outcomes = Vec::with_capacity(workload.items.len());
    let mut wall_latency = Vec::new();
    let started = Instant::now();
    for (i, item) in workload.items.iter().enumerate() {
        if config.sample_decisions {
            pipe.set_decision(DecisionMode::Sample(s.policy.wrapping_add(i as u64)));
        }
        let t = Instant::now();
        let out = drive(&mut pipe, &principals, item)?;
        if out.state.is_committed() {
            wall_latency.push(t.elapsed().as_secs_f64());
        }
        outcomes.push(out);
    }
    let processing_s = started.elapsed().as_secs_f64();

    let labels: Vec<bool> = workload.items.iter().map(|w| w.label.is_fraud()).collect();
    let chain = pipe.chain().clone();
    let ledger_verified = verify_chain(&chain, &registry).is_ok();
    let integrity = ledger_gate(&chain, &workload, &outcomes)?;
    if !ledger_verified {
        return Err(HarnessError::Violation(
            "produced chain fails verification".into(),
        ));
    }

    let mut counts = OutcomeCounts::default();
    outcomes.iter().for_each(|o| counts.add(&o.state));
    let n_fraud = labels.iter().filter(|f| **f).count();
    let committed_fraud = outcomes
        .iter()
        .zip(&labels)
        .filter(|(o, f)| **f && o.state.is_committed())
        .count();
    let held_legit = outcomes
        .iter()
        .zip(&labels)
        .filter(|(o, f)| !**f && matches!(o.state, TerminalState::Held { .. }))
        .count();
    let sim_latency: Vec<f64> = outcomes
        .iter()
        .filter_map(|o| o.validation_latency_ms())
        .map(|ms| ms as f64 / 1000.0)
        .collect();
    let committed_total = counts.committed + counts.committed_after_hold;
    let report = MetricsReport {
        config_version: config.config_version,
        n_txns: outcomes.len(),
        n_fraud_labeled: n_fraud,
        fraud_detection_accuracy: evaluation.accuracy,
        evaluation,
        transaction_integrity_pct: integrity * 100.0,
        ledger_verified,
        chain_length: chain.len(),
        auth_success_rate: ratio(outcomes.len() - counts.rejected_auth, outcomes.len()),
        mean_validation_latency_s: mean(&sim_latency),
        p95_validation_latency_s: percentile(&sim_latency, 0.95),
        blocked_fraud_fraction: ratio(n_fraud - committed_fraud, n_fraud),
        committed_fraud,
        held_legit,
        alerts: pipe.alerts().len(),
        counts,
        consensus: ConsensusStats {
            replicas: pipe.simulation().replicas().len(),
            proposals: pipe.proposals(),
            messages_delivered: pipe.simulation().messages_delivered(),
            view_changes: pipe.simulation().view_changes(),
            final_sim_time_ms: pipe.simulation().now(),
        },
        wall_clock: WallClock {
            training_s,
            processing_s,
            throughput_tps: if processing_s > 0.0 {
                committed_total as f64 / processing_s
            } else {
                0.0
            },
            mean_validation_latency_s: mean(&wall_latency),
            p95_validation_latency_s: percentile(&wall_latency, 0.95),
        },
    };
    Ok(Artifacts {
        report,
        corpus,
        model,
        registry,
        chain,
        outcomes,
        labels,
        alerts: pipe.alerts().to_vec(),
        held: pipe.held().clone(),
    })
}

fn drive(
    pipe: &mut Pipeline,
    principals: &Principals,
    item: &super::WorkloadItem,
) -> Result<TxnOutcome, HarnessError> {
    let session = pipe.begin(&item.txn);
    let otp = pipe
        .authenticator()
        .store()
        .otp(&item.txn.sender_id)
        .expect("workload users are enrolled")
        .clone();
    let req = pipeline::TxnRequest {
        txn: item.txn.clone(),
        inputs: item.inputs(&session, &otp, principals),
        context: item.context.clone(),
    };
    Ok(pipe.process_transaction(session, &req)?)
}

/// A transaction is in the chain iff its outcome says committed, and the
/// chain copy hashes like the submitted one. Returns the intact fraction
/// of committed transactions.
fn ledger_gate(
    chain: &Chain,
    workload: &Workload,
    outcomes: &[TxnOutcome],
) -> Result<f64, HarnessError> {
    let in_chain: BTreeSet<_> = chain
        .blocks()
        .iter()
        .flat_map(|b| b.txns.iter().map(|t| (t.txn_id, hash_txn(t))))
        .collect();
    let ids: BTreeSet<_> = in_chain.iter().map(|(id, _)| *id).collect();
    let mut intact = 0;
    let mut committed = 0;
    for (o, item) in outcomes.iter().zip(&workload.items) {
        let present = ids.contains(&o.txn_id);
        if present != o.state.is_committed() {
            return Err(HarnessError::Violation(format!(
                "ledger gate broken for {}: outcome {} but {}in chain",
                o.txn_id,
                o.state.name(),
                if present { "" } else { "not " }
            )));
        }
        if present {
            committed += 1;
            if in_chain.contains(&(o.txn_id, hash_txn(&item.txn))) {
                intact += 1;
            }
        }
    }
    Ok(if committed == 0 {
        1.0
    } else {
        intact as f64 / committed as f64
    })
}

/// Run the experiment and write every artifact into `out`.
pub fn cmd_run(config: &ExperimentConfig, out: &Path) -> Result<MetricsReport, HarnessError> {
    let a = run_experiment(config)?;
    fs::create_dir_all(out)?;
    fs::write(out.join("config.json"), config.to_json() + "\n")?;
    fs::write(out.join("ledger.jsonl"), to_jsonl(&a.chain))?;
    fs::write(out.join("registry.json"), a.registry.to_json() + "\n")?;
    fs::write(out.join("outcomes.jsonl"), pipeline::to_jsonl(&a.outcomes))?;
    fs::write(out.join("alerts.jsonl"), pipeline::to_jsonl(&a.alerts))?;
    a.held.save(&out.join("held.jsonl"))?;
    fs::write(out.join("model.json"), a.model.to_json() + "\n")?;
    let mut corpus = Vec::new();
    a.corpus.write_csv(&mut corpus)?;
    fs::write(out.join("dataset.csv"), corpus)?;
    write_json(&out.join("report.json"), &a.report)?;

    let mut w = csv::Writer::from_path(out.join("report.csv")).map_err(csv_io)?;
    w.write_record(["metric", "value"]).map_err(csv_io)?;
    for (k, v) in a.report.csv_rows() {
        w.write_record([k, v]).map_err(csv_io)?;
    }
    w.flush()?;

    let mut w = csv::Writer::from_path(out.join("latency.csv")).map_err(csv_io)?;
    w.write_record([
        "txn_id",
        "fraud_label",
        "outcome",
        "score",
        "sim_latency_ms",
    ])
    .map_err(csv_io)?;
    for (o, fraud) in a.outcomes.iter().zip(&a.labels) {
        w.write_record([
            o.txn_id.to_hex(),
            fraud.to_string(),
            o.state.name().to_string(),
            o.score.map(|s| s.to_string()).unwrap_or_default(),
            o.validation_latency_ms()
                .map(|l| l.to_string())
                .unwrap_or_default(),
        ])
        .map_err(csv_io)?;
    }
    w.flush()?;
    Ok(a.report)
}

fn csv_io(e: csv::Error) -> HarnessError {
    HarnessError::Io(e.into())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ads::ForestParams;

    fn small() -> ExperimentConfig {
        ExperimentConfig {
            n_txns: 300,
            ads: ForestParams {
                n_trees: 15,
                ..ForestParams::default()
            },
            n_users: 10,
            n_agents: 3,
            ..ExperimentConfig::default()
        }
    }

    #[test]
    fn small_run_is_consistent() {
        let a = run_experiment(&small()).unwrap();
        let r = &a.report;
        assert_eq!(r.counts.total(), 300);
        assert_eq!(r.n_fraud_labeled, 30);
        assert_eq!(r.alerts, r.counts.held);
        assert_eq!(r.chain_length, 1 + r.counts.committed);
        assert_eq!(r.transaction_integrity_pct, 100.0);
        assert_eq!(r.auth_success_rate, 1.0);
        assert!(r.ledger_verified);
        assert!(a.outcomes.iter().all(|o| o.timeline_is_ordered()));
        assert_eq!(a.held.len(), r.counts.held);
        assert_eq!(r.fraud_detection_accuracy, r.evaluation.accuracy);
        assert!((0.0..=1.0).contains(&r.blocked_fraud_fraction));
    }

    #[test]
    fn one_benign_transaction() {
        let c = ExperimentConfig {
            n_txns: 1,
            corpus_rows: Some(500),
            ..small()
        };
        let a = run_experiment(&c).unwrap();
        assert_eq!(a.report.n_fraud_labeled, 0);
        assert_eq!(a.report.counts.committed, 1);
        assert_eq!(a.chain.len(), 2);
    }

    #[test]
    fn invalid_factors_reject() {
        let c = ExperimentConfig {
            invalid_auth_rate: 1.0,
            n_txns: 60,
            corpus_rows: Some(500),
            ..small()
        };
        let a = run_experiment(&c).unwrap();
        assert_eq!(a.report.counts.rejected_auth, 60);
        assert_eq!(a.report.auth_success_rate, 0.0);
        assert_eq!(a.chain.len(), 1);
        assert_eq!(a.report.consensus.proposals, 0);
    }

    #[test]
    fn percentiles() {
        assert_eq!(percentile(&[], 0.95), 0.0);
        assert_eq!(percentile(&[3.0, 1.0, 2.0], 0.5), 2.0);
        let v: Vec<f64> = (1..=100).map(f64::from).collect();
        assert_eq!(percentile(&v, 0.95), 95.0);
    }
}
