//! Transaction lifecycle: authenticate, agent decision, anomaly screening,
//! replicated commitment and ledger append, plus the hold-and-alert path
//! for suspicious transactions.
//!
//! Every local stage costs [`STAGE_MS`] of simulated time, so timeline
//! stamps strictly increase even on a zero-latency network.

use std::collections::BTreeMap;
use std::fs;
use std::io;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ads::{self, extract_features, ForestModel, TxnFeatures};
use crate::authn::{AuthError, AuthInputs, AuthResult, AuthSession, Authenticator, ChallengeNonce};
use crate::crypto::{Digest, Signature};
use crate::ledger::{build_block, Chain, LedgerError};
use crate::model::{
    validate_transaction, GeoPoint, PrincipalRegistry, SimClock, Transaction, TxnId, Violation,
};
use crate::netsim::Simulation;
use crate::policy::{self, Action, DecisionMode, PolicyError, PolicyWeights};

/// Simulated cost of one local processing stage, ms.
pub const STAGE_MS: u64 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Received,
    Authenticated,
    Decided,
    Screened,
    Held,
    StepUpVerified,
    ConsensusStarted,
    Committed,
    Rejected,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TimelineEntry {
    pub stage: Stage,
    pub at: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "state", rename_all = "snake_case")]
pub enum TerminalState {
    Committed { height: u64 },
    RejectedAuth { reason: String },
    DeniedByAgent,
    Held { score: f64 },
    RejectedAfterHold { reason: String },
    CommittedAfterHold { height: u64 },
}

impl TerminalState {
    pub fn name(&self) -> &'static str {
        match self {
            TerminalState::Committed { .. } => "committed",
            TerminalState::RejectedAuth { .. } => "rejected_auth",
            TerminalState::DeniedByAgent => "denied_by_agent",
            TerminalState::Held { .. } => "held",
            TerminalState::RejectedAfterHold { .. } => "rejected_after_hold",
            TerminalState::CommittedAfterHold { .. } => "committed_after_hold",
        }
    }

    /// Whether the transaction ended up in the chain.
    pub fn is_committed(&self) -> bool {
        matches!(
            self,
            TerminalState::Committed { .. } | TerminalState::CommittedAfterHold { .. }
        )
    }

    pub fn height(&self) -> Option<u64> {
        match self {
            TerminalState::Committed { height } | TerminalState::CommittedAfterHold { height } => {
                Some(*height)
            }
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TxnOutcome {
    pub txn_id: TxnId,
    #[serde(flatten)]
    pub state: TerminalState,
    /// Fraud score, when screening ran.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub score: Option<f64>,
    pub timeline: Vec<TimelineEntry>,
}

impl TxnOutcome {
    pub fn at(&self, stage: Stage) -> Option<u64> {
        self.timeline
            .iter()
            .find(|e| e.stage == stage)
            .map(|e| e.at)
    }

    /// Simulated ms from consensus start to commit.
    pub fn validation_latency_ms(&self) -> Option<u64> {
        Some(self.at(Stage::Committed)? - self.at(Stage::ConsensusStarted)?)
    }

    /// Stages in lifecycle order with strictly increasing stamps.
    pub fn timeline_is_ordered(&self) -> bool {
        self.timeline
            .windows(2)
            .all(|w| w[0].stage < w[1].stage && w[0].at < w[1].at)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AlertReason {
    AnomalyScore,
    AgentFlag,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Alert {
    pub txn_id: TxnId,
    pub score: f64,
    pub reason: AlertReason,
    pub raised_at: u64,
}

/// What the screener needs besides the transaction itself.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScreeningContext {
    /// The sender's earlier transactions.
    pub history: Vec<Transaction>,
    pub home: GeoPoint,
    pub session_duration_s: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TxnRequest {
    pub txn: Transaction,
    pub inputs: AuthInputs,
    pub context: ScreeningContext,
}

/// Fresh factors for releasing a held transaction: the next OTP and the
/// agent's signature over the hold's challenge nonce.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StepUp {
    pub otp_code: String,
    pub response: Signature,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HeldRecord {
    pub txn: Transaction,
    pub score: f64,
    pub reason: AlertReason,
    pub nonce: ChallengeNonce,
    pub timeline: Vec<TimelineEntry>,
}

/// Transactions waiting for step-up, keyed by id. Persisted as JSON Lines.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct HeldStore {
    records: BTreeMap<TxnId, HeldRecord>,
}

impl HeldStore {
    pub fn get(&self, id: &TxnId) -> Option<&HeldRecord> {
        self.records.get(id)
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &HeldRecord> {
        self.records.values()
    }

    fn insert(&mut self, rec: HeldRecord) {
        self.records.insert(rec.txn.txn_id, rec);
    }

    fn remove(&mut self, id: &TxnId) -> Option<HeldRecord> {
        self.records.remove(id)
    }

    pub fn to_jsonl(&self) -> Vec<u8> {
        to_jsonl(self.records.values())
    }

    pub fn from_jsonl(bytes: &[u8]) -> Result<Self, serde_json::Error> {
        let mut store = HeldStore::default();
        for line in bytes.split(|b| *b == b'\n').filter(|l| !l.is_empty()) {
            store.insert(serde_json::from_slice(line)?);
        }
        Ok(store)
    }

    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        Ok(Self::from_jsonl(&fs::read(path)?)?)
    }

    pub fn save(&self, path: &Path) -> Result<(), PipelineError> {
        Ok(fs::write(path, self.to_jsonl())?)
    }
}

/// One JSON document per line.
pub fn to_jsonl<'a, T: Serialize + 'a>(items: impl IntoIterator<Item = &'a T>) -> Vec<u8> {
    let mut out = Vec::new();
    for item in items {
        serde_json::to_writer(&mut out, item).expect("serializable record");
        out.push(b'\n');
    }
    out
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("invalid transaction: {0:?}")]
    InvalidTransaction(Vec<Violation>),
    #[error(
        "session is for {session_user}/{session_agent}, transaction is {txn_user}/{txn_agent}"
    )]
    SessionMismatch {
        session_user: String,
        session_agent: String,
        txn_user: String,
        txn_agent: String,
    },
    #[error("transaction {0} is not held")]
    NotHeld(TxnId),
    #[error("consensus timeout for transaction {txn_id} after {steps} steps")]
    ConsensusTimeout { txn_id: TxnId, steps: u64 },
    #[error(transparent)]
    Auth(#[from] AuthError),
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error(transparent)]
    Ledger(#[from] LedgerError),
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error("malformed held store: {0}")]
    Json(#[from] serde_json::Error),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub theta: f64,
    pub decision: DecisionMode,
    /// Event budget per consensus round.
    pub max_steps: u64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            theta: ads::DEFAULT_THETA,
            decision: DecisionMode::Argmax,
            max_steps: 100_000,
        }
    }
}

/// Single-writer orchestrator owning the authenticator, the consensus
/// network and the chain.
pub struct Pipeline {
    config: PipelineConfig,
    registry: PrincipalRegistry,
    auth: Authenticator,
    policy: PolicyWeights,
    model: ForestModel,
    sim: Simulation,
    chain: Chain,
    held: HeldStore,
    alerts: Vec<Alert>,
    clock: SimClock,
    proposals: u64,
}

impl Pipeline {
    pub fn new(
        config: PipelineConfig,
        registry: PrincipalRegistry,
        auth: Authenticator,
        policy: PolicyWeights,
        model: ForestModel,
        sim: Simulation,
    ) -> Self {
        Pipeline {
            config,
            registry,
            auth,
            policy,
            model,
            sim,
            chain: Chain::new(),
            held: HeldStore::default(),
            alerts: Vec::new(),
            clock: SimClock::new(0),
            proposals: 0,
        }
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.config
    }

    pub fn set_decision(&mut self, mode: DecisionMode) {
        self.config.decision = mode;
    }

    pub fn registry(&self) -> &PrincipalRegistry {
        &self.registry
    }

    pub fn authenticator(&self) -> &Authenticator {
        &self.auth
    }

    pub fn model(&self) -> &ForestModel {
        &self.model
    }

    pub fn simulation(&self) -> &Simulation {
        &self.sim
    }

    pub fn chain(&self) -> &Chain {
        &self.chain
    }

    pub fn held(&self) -> &HeldStore {
        &self.held
    }

    /// Replace the pending store, e.g. with one loaded after a restart.
    pub fn restore_held(&mut self, store: HeldStore) {
        self.held = store;
    }

    pub fn alerts(&self) -> &[Alert] {
        &self.alerts
    }

    pub fn now(&self) -> u64 {
        self.clock.now()
    }

    /// Consensus rounds started so far.
    pub fn proposals(&self) -> u64 {
        self.proposals
    }

    fn tick(&mut self) -> u64 {
        self.clock.advance_by(STAGE_MS)
    }

    /// Open an authentication session for `txn`. The agent answers the
    /// session's challenge in the [`AuthInputs`] of the request.
    pub fn begin(&mut self, txn: &Transaction) -> AuthSession {
        let now = self.clock.now();
        self.auth
            .issue_challenge(&txn.sender_id, &txn.agent_id, now)
    }

    /// Features the screener extracts for `req`.
    pub fn features(&self, req: &TxnRequest) -> TxnFeatures {
        let c = &req.context;
        extract_features(&req.txn, &c.history, c.home, c.session_duration_s)
    }

    /// Run `req` through every stage. `session` must come from
    /// [`Pipeline::begin`] for the same transaction.
    pub fn process_transaction(
        &mut self,
        mut session: AuthSession,
        req: &TxnRequest,
    ) -> Result<TxnOutcome, PipelineError> {
        let txn = &req.txn;
        let violations = validate_transaction(txn, &self.registry);
        if !violations.is_empty() {
            return Err(PipelineError::InvalidTransaction(violations));
        }
        if session.user_id != txn.sender_id || session.agent_id != txn.agent_id {
            return Err(PipelineError::SessionMismatch {
                session_user: session.user_id.clone(),
                session_agent: session.agent_id.clone(),
                txn_user: txn.sender_id.clone(),
                txn_agent: txn.agent_id.clone(),
            });
        }
        let mut timeline = vec![TimelineEntry {
            stage: Stage::Received,
            at: self.tick(),
        }];
        let outcome = |state, score, timeline| TxnOutcome {
            txn_id: txn.txn_id,
            state,
            score,
            timeline,
        };

        let at = self.tick();
        if let AuthResult::Failed(reason) = self.auth.authenticate(&mut session, &req.inputs, at)? {
            timeline.push(TimelineEntry {
                stage: Stage::Rejected,
                at,
            });
            let state = TerminalState::RejectedAuth {
                reason: reason.as_str().to_string(),
            };
            return Ok(outcome(state, None, timeline));
        }
        timeline.push(TimelineEntry {
            stage: Stage::Authenticated,
            at,
        });

        let features = self.features(req);
        let action = policy::decide(&features.to_array(), &self.policy, self.config.decision)?;
        let at = self.tick();
        if action == Action::Deny {
            timeline.push(TimelineEntry {
                stage: Stage::Rejected,
                at,
            });
            return Ok(outcome(TerminalState::DeniedByAgent, None, timeline));
        }
        timeline.push(TimelineEntry {
            stage: Stage::Decided,
            at,
        });

        let score = ads::score(&self.model, &features);
        timeline.push(TimelineEntry {
            stage: Stage::Screened,
            at: self.tick(),
        });
        let reason = if action == Action::Flag {
            Some(AlertReason::AgentFlag)
        } else if score >= self.config.theta {
            Some(AlertReason::AnomalyScore)
        } else {
            None
        };
        if let Some(reason) = reason {
            let at = self.tick();
            timeline.push(TimelineEntry {
                stage: Stage::Held,
                at,
            });
            self.alerts.push(Alert {
                txn_id: txn.txn_id,
                score,
                reason,
                raised_at: at,
            });
            let nonce = self.auth.fresh_nonce();
            self.held.insert(HeldRecord {
                txn: txn.clone(),
                score,
                reason,
                nonce,
                timeline: timeline.clone(),
            });
            return Ok(outcome(
                TerminalState::Held { score },
                Some(score),
                timeline,
            ));
        }

        let height = self.commit(txn, &mut timeline)?;
        Ok(outcome(
            TerminalState::Committed { height },
            Some(score),
            timeline,
        ))
    }

    /// Release a held transaction after step-up verification.
    pub fn resume_held(
        &mut self,
        txn_id: &TxnId,
        step_up: &StepUp,
    ) -> Result<TxnOutcome, PipelineError> {
        let rec = self
            .held
            .get(txn_id)
            .cloned()
            .ok_or(PipelineError::NotHeld(*txn_id))?;
        self.clock.catch_up(rec.timeline.last().map_or(0, |e| e.at));
        let at = self.tick();
        let result = self.auth.step_up(
            &rec.txn.sender_id,
            &rec.txn.agent_id,
            &rec.nonce,
            &step_up.otp_code,
            &step_up.response,
            at,
        )?;
        self.held.remove(txn_id);
        let mut timeline = rec.timeline;
        if let AuthResult::Failed(reason) = result {
            timeline.push(TimelineEntry {
                stage: Stage::Rejected,
                at,
            });
            return Ok(TxnOutcome {
                txn_id: *txn_id,
                state: TerminalState::RejectedAfterHold {
                    reason: reason.as_str().to_string(),
                },
                score: Some(rec.score),
                timeline,
            });
        }
        timeline.push(TimelineEntry {
            stage: Stage::StepUpVerified,
            at,
        });
        let height = self.commit(&rec.txn, &mut timeline)?;
        Ok(TxnOutcome {
            txn_id: *txn_id,
            state: TerminalState::CommittedAfterHold { height },
            score: Some(rec.score),
            timeline,
        })
    }

    /// Agree on a one-transaction block through the replicas and append it.
    fn commit(
        &mut self,
        txn: &Transaction,
        timeline: &mut Vec<TimelineEntry>,
    ) -> Result<u64, PipelineError> {
        let primary = self.sim.current_primary();
        let proposer = self.sim.config().replica_ids[primary].clone();
        let block = build_block(
            self.chain.tip(),
            vec![txn.clone()],
            &proposer,
            self.sim.replica_key(primary),
        )?;
        let started = self.tick();
        timeline.push(TimelineEntry {
            stage: Stage::ConsensusStarted,
            at: started,
        });
        self.sim.advance_to(started);
        self.proposals += 1;
        self.sim.submit_request(block.block_hash);
        let report = self.sim.run_until_quiescent(self.config.max_steps);
        let quorum = self.sim.config().quorum();
        let committed_at = quorum_time(&report.commits, &block.block_hash, quorum);
        let Some(committed_at) = committed_at.filter(|_| report.quiescent) else {
            return Err(PipelineError::ConsensusTimeout {
                txn_id: txn.txn_id,
                steps: report.steps,
            });
        };
        let at = committed_at.max(started + STAGE_MS);
        self.clock.catch_up(at);
        self.clock.catch_up(self.sim.now());
        timeline.push(TimelineEntry {
            stage: Stage::Committed,
            at,
        });
        let height = self.chain.append(block)?.height;
        Ok(height)
    }
}

/// Time at which the `quorum`-th replica executed `digest`.
fn quorum_time(
    commits: &[crate::netsim::CommitEvent],
    digest: &Digest,
    quorum: usize,
) -> Option<u64> {
    commits
        .iter()
        .filter(|c| c.digest == *digest)
        .nth(quorum.checked_sub(1)?)
        .map(|c| c.at)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ads::{generate_dataset, train_forest, ForestParams};
    use crate::authn::{
        issue_certificate, respond_to_challenge, AuthConfig, BiometricTemplate, EnrollmentStore,
        OtpSecret,
    };
    use crate::consensus::ConsensusConfig;
    use crate::crypto::KeyPair;
    use crate::ledger::verify_chain;
    use crate::model::{Amount, Nonce, Principal, PrincipalKind};
    use crate::netsim::NetConfig;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::sync::OnceLock;

    fn model() -> ForestModel {
        static MODEL: OnceLock<ForestModel> = OnceLock::new();
        MODEL
            .get_or_init(|| {
                let data = generate_dataset(2_000, 0.1, 11).unwrap();
                let params = ForestParams {
                    n_trees: 20,
                    ..ForestParams::default()
                };
                train_forest(&data, params, 3).unwrap()
            })
            .clone()
    }

    struct Fixture {
        pipeline: Pipeline,
        agent: KeyPair,
        template: BiometricTemplate,
    }

    fn fixture(net: NetConfig) -> Fixture {
        let ca = KeyPair::from_seed([1; 32]);
        let agent = KeyPair::from_seed([2; 32]);
        let template = BiometricTemplate::random(&mut ChaCha8Rng::seed_from_u64(5));
        let mut store = EnrollmentStore::new("ca", ca.public_key());
        store.enroll_user("alice", template.clone(), OtpSecret::new([9; 20]));
        store.enroll_agent(issue_certificate(
            "bot",
            agent.public_key(),
            "ca",
            &ca,
            u64::MAX,
        ));
        let consensus = ConsensusConfig::with_default_ids(1, 100);
        let keys = Simulation::generate_keys(4, 77);
        let mut registry = PrincipalRegistry::new();
        let mut reg = |id: &str, kind, key: &KeyPair| {
            registry
                .register(Principal {
                    id: id.into(),
                    kind,
                    public_key: key.public_key(),
                })
                .unwrap()
        };
        reg("alice", PrincipalKind::User, &KeyPair::from_seed([3; 32]));
        reg("shop", PrincipalKind::User, &KeyPair::from_seed([4; 32]));
        reg("bot", PrincipalKind::Agent, &agent);
        for (id, k) in consensus.replica_ids.iter().zip(&keys) {
            reg(id, PrincipalKind::Replica, k);
        }
        let sim = Simulation::new(consensus, net, keys).unwrap();
        let pipeline = Pipeline::new(
            PipelineConfig::default(),
            registry,
            Authenticator::new(store, AuthConfig::default(), 1),
            PolicyWeights::standard(),
            model(),
            sim,
        );
        Fixture {
            pipeline,
            agent,
            template,
        }
    }

    fn txn(i: u128, amount_units: f64, home: GeoPoint, loc: GeoPoint) -> TxnRequest {
        let hour = 14 * 3_600_000;
        TxnRequest {
            txn: Transaction {
                txn_id: TxnId::from_u128(i),
                sender_id: "alice".into(),
                receiver_id: "shop".into(),
                agent_id: "bot".into(),
                amount: Amount::from_units(amount_units),
                timestamp: 30 * 86_400_000 + hour,
                location: loc,
                nonce: Nonce([i as u8; 8]),
            },
            inputs: AuthInputs {
                probe: BiometricTemplate::normalized([1.0; 8]).unwrap(),
                otp_code: String::new(),
                challenge_response: Signature::ZERO,
            },
            context: ScreeningContext {
                history: Vec::new(),
                home,
                session_duration_s: 90.0,
            },
        }
    }

    fn benign(i: u128) -> TxnRequest {
        let home = GeoPoint::from_degrees(48.85, 2.35);
        let mut r = txn(i, 30.0, home, home);
        // Ten earlier purchases through the same agent, all over a week ago.
        r.context.history = (0..10)
            .map(|k| {
                let mut h = r.txn.clone();
                h.txn_id = TxnId::from_u128(1_000 + k);
                h.timestamp -= 8 * 86_400_000 + k as u64;
                h
            })
            .collect();
        r
    }

    fn extreme(i: u128) -> TxnRequest {
        let home = GeoPoint::from_degrees(48.85, 2.35);
        // Roughly 2,000 km east of home, at a fraud-sized amount.
        let mut r = txn(i, 2_500.0, home, GeoPoint::from_degrees(48.85, 29.5));
        r.txn.timestamp -= 12 * 3_600_000;
        r.context.session_duration_s = 30.0;
        r
    }

    impl Fixture {
        fn honest_run(&mut self, mut req: TxnRequest) -> TxnOutcome {
            let s = self.pipeline.begin(&req.txn);
            req.inputs = AuthInputs {
                probe: self.template.clone(),
                otp_code: self
                    .pipeline
                    .authenticator()
                    .store()
                    .otp("alice")
                    .unwrap()
                    .current_code(),
                challenge_response: respond_to_challenge(&s.nonce, &self.agent),
            };
            self.pipeline.process_transaction(s, &req).unwrap()
        }

        fn step_up(&self, id: &TxnId) -> StepUp {
            let rec = self.pipeline.held().get(id).unwrap();
            StepUp {
                otp_code: self
                    .pipeline
                    .authenticator()
                    .store()
                    .otp("alice")
                    .unwrap()
                    .current_code(),
                response: respond_to_challenge(&rec.nonce, &self.agent),
            }
        }
    }

    #[test]
    fn all_pass_path_commits() {
        let mut fx = fixture(NetConfig::default());
        let out = fx.honest_run(benign(1));
        assert_eq!(out.state, TerminalState::Committed { height: 1 });
        assert_eq!(fx.pipeline.chain().len(), 2);
        assert!(out.timeline_is_ordered());
        let stages: Vec<Stage> = out.timeline.iter().map(|e| e.stage).collect();
        assert_eq!(
            stages,
            [
                Stage::Received,
                Stage::Authenticated,
                Stage::Decided,
                Stage::Screened,
                Stage::ConsensusStarted,
                Stage::Committed
            ]
        );
        assert!(out.validation_latency_ms().unwrap() >= 1);
        assert!(fx.pipeline.alerts().is_empty());
        verify_chain(fx.pipeline.chain(), fx.pipeline.registry()).unwrap();
    }

    #[test]
    fn wrong_otp_short_circuits() {
        let mut fx = fixture(NetConfig::default());
        let req = benign(1);
        let s = fx.pipeline.begin(&req.txn);
        let mut req2 = req.clone();
        req2.inputs = AuthInputs {
            probe: fx.template.clone(),
            otp_code: "000000".into(),
            challenge_response: respond_to_challenge(&s.nonce, &fx.agent),
        };
        let before = fx.pipeline.simulation().messages_delivered();
        let out = fx.pipeline.process_transaction(s, &req2).unwrap();
        assert_eq!(
            out.state,
            TerminalState::RejectedAuth {
                reason: "otp".into()
            }
        );
        assert_eq!(fx.pipeline.chain().len(), 1);
        assert_eq!(fx.pipeline.proposals(), 0);
        assert_eq!(fx.pipeline.simulation().messages_delivered(), before);
        assert!(out.timeline_is_ordered());
    }

    #[test]
    fn extreme_features_are_held_with_one_alert() {
        let mut fx = fixture(NetConfig::default());
        let req = extreme(2);
        let f = fx.pipeline.features(&req);
        assert!((f.geo_distance_km - 2_000.0).abs() < 50.0);
        let expected = ads::score(fx.pipeline.model(), &f);
        assert!(expected >= 0.5);
        let out = fx.honest_run(req);
        assert_eq!(out.state, TerminalState::Held { score: expected });
        assert_eq!(fx.pipeline.alerts().len(), 1);
        assert_eq!(fx.pipeline.alerts()[0].reason, AlertReason::AnomalyScore);
        assert_eq!(fx.pipeline.chain().len(), 1);
        assert_eq!(fx.pipeline.proposals(), 0);
        assert_eq!(fx.pipeline.held().len(), 1);
    }

    #[test]
    fn step_up_releases_hold() {
        let mut fx = fixture(NetConfig::default());
        let out = fx.honest_run(extreme(2));
        let up = fx.step_up(&out.txn_id);
        let res = fx.pipeline.resume_held(&out.txn_id, &up).unwrap();
        assert_eq!(res.state, TerminalState::CommittedAfterHold { height: 1 });
        assert!(res.timeline_is_ordered());
        assert!(fx.pipeline.held().is_empty());
        assert_eq!(fx.pipeline.chain().tip().txns[0].txn_id, out.txn_id);
    }

    #[test]
    fn replayed_otp_rejects_after_hold() {
        let mut fx = fixture(NetConfig::default());
        let req = extreme(2);
        let s = fx.pipeline.begin(&req.txn);
        let code = fx
            .pipeline
            .authenticator()
            .store()
            .otp("alice")
            .unwrap()
            .current_code();
        let mut req2 = req.clone();
        req2.inputs = AuthInputs {
            probe: fx.template.clone(),
            otp_code: code.clone(),
            challenge_response: respond_to_challenge(&s.nonce, &fx.agent),
        };
        let out = fx.pipeline.process_transaction(s, &req2).unwrap();
        let mut up = fx.step_up(&out.txn_id);
        up.otp_code = code;
        let res = fx.pipeline.resume_held(&out.txn_id, &up).unwrap();
        assert_eq!(
            res.state,
            TerminalState::RejectedAfterHold {
                reason: "otp".into()
            }
        );
        assert_eq!(fx.pipeline.chain().len(), 1);
    }

    #[test]
    fn resume_requires_hold() {
        let mut fx = fixture(NetConfig::default());
        let out = fx.honest_run(benign(1));
        let up = StepUp {
            otp_code: "123456".into(),
            response: Signature::ZERO,
        };
        let err = fx.pipeline.resume_held(&out.txn_id, &up).unwrap_err();
        assert!(matches!(err, PipelineError::NotHeld(_)));
        assert!(err.to_string().contains("not held"));
    }

    #[test]
    fn held_store_survives_restart() {
        let mut fx = fixture(NetConfig::default());
        let out = fx.honest_run(extreme(2));
        let bytes = fx.pipeline.held().to_jsonl();
        let up = fx.step_up(&out.txn_id);
        fx.pipeline.restore_held(HeldStore::default());
        assert!(fx.pipeline.resume_held(&out.txn_id, &up).is_err());
        fx.pipeline
            .restore_held(HeldStore::from_jsonl(&bytes).unwrap());
        let res = fx.pipeline.resume_held(&out.txn_id, &up).unwrap();
        assert!(res.state.is_committed());
    }

    #[test]
    fn outcome_json_is_flat() {
        let mut fx = fixture(NetConfig::default());
        let out = fx.honest_run(benign(1));
        let v: serde_json::Value = serde_json::to_value(&out).unwrap();
        assert_eq!(v["state"], "committed");
        assert_eq!(v["height"], 1);
        let back: TxnOutcome = serde_json::from_value(v).unwrap();
        assert_eq!(back, out);
    }

    #[test]
    fn mute_primary_still_commits() {
        let mut net = NetConfig::default();
        net.byzantine
            .insert("replica-0".into(), crate::netsim::ByzantineBehavior::Mute);
        let mut fx = fixture(net);
        for i in 1..=3 {
            let out = fx.honest_run(benign(i));
            assert_eq!(out.state.height(), Some(i as u64));
        }
        verify_chain(fx.pipeline.chain(), fx.pipeline.registry()).unwrap();
        assert!(fx.pipeline.simulation().view_changes() >= 1);
    }

    #[test]
    fn zero_latency_network_keeps_timeline_strict() {
        let net = NetConfig {
            latency_ms: (0, 0),
            ..NetConfig::default()
        };
        let mut fx = fixture(net);
        let out = fx.honest_run(benign(1));
        assert!(out.timeline_is_ordered());
        assert_eq!(out.validation_latency_ms(), Some(STAGE_MS));
    }
}
