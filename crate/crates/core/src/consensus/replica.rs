use std::cell::RefCell;
use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::message::{ConsensusMessage, MessageKind, PreparedProof};
use super::{ConsensusConfig, ConsensusError};
use crate::canonical::to_canonical_bytes;
use crate::crypto::{sha256, Digest, KeyPair, PublicKey, Signature, VerifyingKeyCache};

#[derive(Clone, Copy, PartialEq, Eq, Debug, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AuditReason {
    UnknownSender,
    OwnMessage,
    BadSignature,
    StaleView,
    NotFromPrimary,
    UnknownRequest,
    ConflictingPrePrepare,
    Duplicate,
    InvalidViewChange,
    InvalidNewView,
}

/// A message the replica ignored, and why.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuditEntry {
    pub at: u64,
    pub sender_id: String,
    pub kind: MessageKind,
    pub view: u64,
    pub seq: u64,
    pub reason: AuditReason,
}

/// What a replica wants done after one input: messages to broadcast to
/// every other replica, and `(seq, digest)` pairs it executed.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Output {
    pub messages: Vec<ConsensusMessage>,
    pub committed: Vec<(u64, Digest)>,
}

impl Output {
    pub fn is_empty(&self) -> bool {
        self.messages.is_empty() && self.committed.is_empty()
    }
}

/// Signed messages by sender.
type Votes = BTreeMap<String, ConsensusMessage>;

#[derive(Debug, Default)]
struct Slot {
    preprepare: Option<Digest>,
    prepares: BTreeMap<String, ConsensusMessage>,
    commits: BTreeMap<String, Digest>,
    prepared: bool,
    committed: bool,
}

#[derive(Debug)]
pub struct Replica {
    config: ConsensusConfig,
    id: String,
    key: KeyPair,
    keys: Arc<BTreeMap<String, VerifyingKeyCache>>,
    /// `(signing digest, signature)` pairs already checked. Proofs inside
    /// view changes repeat messages seen before.
    verified: RefCell<HashSet<(Digest, Signature)>>,
    now: u64,

    view: u64,
    /// False between sending `ViewChange(view)` and installing `view`.
    view_active: bool,
    views_installed: u64,
    next_seq: u64,
    log: BTreeMap<(u64, u64), Slot>,
    /// Highest-view prepared proof per sequence number.
    prepared_certs: BTreeMap<u64, PreparedProof>,
    committed_seqs: BTreeMap<u64, Digest>,
    committed: Vec<(u64, Digest)>,
    next_exec: u64,
    /// Signed commits for unexecuted sequence numbers, from any view.
    commit_votes: BTreeMap<u64, BTreeMap<(u64, Digest), Votes>>,
    /// A quorum of matching signed commits per executed sequence number,
    /// replayed to replicas that fall behind.
    certificates: BTreeMap<u64, Vec<ConsensusMessage>>,

    known: BTreeSet<Digest>,
    executed: BTreeSet<Digest>,
    /// Requests not yet executed, by arrival order.
    pending: BTreeMap<u64, Digest>,
    pending_index: BTreeMap<Digest, u64>,
    arrivals: u64,
    /// Digests the primary has placed in the current view.
    assigned: BTreeSet<Digest>,
    /// First sequence number the current view re-proposes from.
    view_low: u64,

    timer: Option<u64>,
    timeout_ms: u64,
    view_changes: BTreeMap<u64, BTreeMap<String, ConsensusMessage>>,
    new_view_sent: BTreeSet<u64>,
    future: Vec<ConsensusMessage>,
    audit: Vec<AuditEntry>,
    out: Output,
}

impl Replica {
    /// `directory` maps every replica id to its public key.
    pub fn new(
        config: ConsensusConfig,
        id: &str,
        key: KeyPair,
        directory: &BTreeMap<String, PublicKey>,
    ) -> Result<Self, ConsensusError> {
        config.validate()?;
        let keys: BTreeMap<String, VerifyingKeyCache> = config
            .replica_ids
            .iter()
            .map(|r| {
                directory
                    .get(r)
                    .map(|pk| (r.clone(), VerifyingKeyCache::new(pk)))
                    .ok_or_else(|| ConsensusError::UnknownReplica(r.clone()))
            })
            .collect::<Result<_, _>>()?;
        Self::with_shared_keys(config, id, key, Arc::new(keys), directory)
    }

    /// Like [`Replica::new`] but reusing already decoded keys.
    pub fn with_shared_keys(
        config: ConsensusConfig,
        id: &str,
        key: KeyPair,
        keys: Arc<BTreeMap<String, VerifyingKeyCache>>,
        directory: &BTreeMap<String, PublicKey>,
    ) -> Result<Self, ConsensusError> {
        if !config.contains(id) {
            return Err(ConsensusError::UnknownReplica(id.to_string()));
        }
        if directory.get(id) != Some(&key.public_key()) {
            return Err(ConsensusError::InvalidConfig(format!(
                "key for {id} does not match the directory"
            )));
        }
        let timeout_ms = config.timeout_ms;
        Ok(Replica {
            config,
            id: id.to_string(),
            key,
            keys,
            verified: RefCell::new(HashSet::new()),
            now: 0,
            view: 0,
            view_active: true,
            views_installed: 0,
            next_seq: 0,
            log: BTreeMap::new(),
            prepared_certs: BTreeMap::new(),
            committed_seqs: BTreeMap::new(),
            committed: Vec::new(),
            next_exec: 0,
            commit_votes: BTreeMap::new(),
            certificates: BTreeMap::new(),
            known: BTreeSet::new(),
            executed: BTreeSet::new(),
            pending: BTreeMap::new(),
            pending_index: BTreeMap::new(),
            arrivals: 0,
            assigned: BTreeSet::new(),
            view_low: 0,
            timer: None,
            timeout_ms,
            view_changes: BTreeMap::new(),
            new_view_sent: BTreeSet::new(),
            future: Vec::new(),
            audit: Vec::new(),
            out: Output::default(),
        })
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn config(&self) -> &ConsensusConfig {
        &self.config
    }

    pub fn view(&self) -> u64 {
        self.view
    }

    pub fn in_view_change(&self) -> bool {
        !self.view_active
    }

    /// Number of views installed after view 0.
    pub fn views_installed(&self) -> u64 {
        self.views_installed
    }

    pub fn is_primary(&self) -> bool {
        self.config.primary_of(self.view) == self.id
    }

    pub fn next_seq(&self) -> u64 {
        self.next_seq
    }

    /// Executed `(seq, digest)` pairs in sequence order.
    pub fn committed(&self) -> &[(u64, Digest)] {
        &self.committed
    }

    pub fn has_executed(&self, digest: &Digest) -> bool {
        self.executed.contains(digest)
    }

    pub fn pending_requests(&self) -> usize {
        self.pending.len()
    }

    /// Deadline of the view-change timer, if armed.
    pub fn timer(&self) -> Option<u64> {
        self.timer
    }

    pub fn audit_log(&self) -> &[AuditEntry] {
        &self.audit
    }

    pub fn audit_jsonl(&self) -> Vec<u8> {
        let mut out = Vec::new();
        for e in &self.audit {
            serde_json::to_writer(&mut out, e).expect("audit entry serializes");
            out.push(b'\n');
        }
        out
    }

    fn quorum(&self) -> usize {
        self.config.quorum()
    }

    fn take_output(&mut self) -> Output {
        std::mem::take(&mut self.out)
    }

    fn tick(&mut self, now: u64) {
        self.now = self.now.max(now);
    }

    fn send(&mut self, msg: ConsensusMessage) {
        self.out.messages.push(msg.signed(&self.key));
    }

    fn log_ignored(&mut self, msg: &ConsensusMessage, reason: AuditReason) {
        self.audit.push(AuditEntry {
            at: self.now,
            sender_id: msg.sender_id.clone(),
            kind: msg.kind,
            view: msg.view,
            seq: msg.seq,
            reason,
        });
    }

    fn arm_timer(&mut self) {
        self.timer = Some(self.now.saturating_add(self.timeout_ms));
    }

    /// A client request has arrived. Backups remember it and start their
    /// timer; the primary also proposes it.
    pub fn on_request(&mut self, digest: Digest, now: u64) -> Output {
        self.tick(now);
        if self.executed.contains(&digest) || self.pending_index.contains_key(&digest) {
            return Output::default();
        }
        self.known.insert(digest);
        self.pending.insert(self.arrivals, digest);
        self.pending_index.insert(digest, self.arrivals);
        self.arrivals += 1;
        if self.timer.is_none() {
            self.arm_timer();
        }
        self.propose_pending();
        self.take_output()
    }

    /// Assign the next sequence number to `digest` and broadcast a
    /// `PrePrepare` (with the primary's own `Prepare`).
    pub fn propose(&mut self, digest: Digest) -> Result<Output, ConsensusError> {
        if !self.is_primary() {
            return Err(ConsensusError::NotPrimary);
        }
        if !self.view_active {
            return Err(ConsensusError::ViewChangeInProgress);
        }
        self.known.insert(digest);
        self.propose_inner(digest);
        Ok(self.take_output())
    }

    fn propose_inner(&mut self, digest: Digest) {
        let (view, seq) = (self.view, self.next_seq);
        self.next_seq += 1;
        self.assigned.insert(digest);
        self.send(ConsensusMessage::new(
            MessageKind::PrePrepare,
            view,
            seq,
            digest,
            &self.id,
        ));
        self.accept_preprepare(view, seq, digest);
    }

    /// Process one delivered message.
    pub fn handle_message(&mut self, msg: ConsensusMessage, now: u64) -> Output {
        self.tick(now);
        if !self.keys.contains_key(&msg.sender_id) {
            self.log_ignored(&msg, AuditReason::UnknownSender);
            return self.take_output();
        }
        if msg.sender_id == self.id {
            self.log_ignored(&msg, AuditReason::OwnMessage);
            return self.take_output();
        }
        if !self.check_sig(&msg) {
            self.log_ignored(&msg, AuditReason::BadSignature);
            return self.take_output();
        }
        self.dispatch(msg);
        self.take_output()
    }

    fn dispatch(&mut self, msg: ConsensusMessage) {
        if msg.kind == MessageKind::Commit {
            self.record_commit_vote(&msg);
        }
        match msg.kind {
            MessageKind::PrePrepare | MessageKind::Prepare | MessageKind::Commit => {
                if msg.view < self.view {
                    self.log_ignored(&msg, AuditReason::StaleView);
                } else if msg.view > self.view || !self.view_active {
                    self.future.push(msg);
                } else {
                    match msg.kind {
                        MessageKind::PrePrepare => self.on_preprepare(msg),
                        MessageKind::Prepare => self.on_prepare(msg),
                        _ => self.on_commit(msg),
                    }
                }
            }
            MessageKind::ViewChange => self.on_view_change(msg),
            MessageKind::NewView => self.on_new_view(msg),
        }
    }

    fn on_preprepare(&mut self, msg: ConsensusMessage) {
        if msg.sender_id != self.config.primary_of(msg.view) {
            return self.log_ignored(&msg, AuditReason::NotFromPrimary);
        }
        let d = msg.payload_digest;
        if d == Digest::ZERO || !self.known.contains(&d) {
            return self.log_ignored(&msg, AuditReason::UnknownRequest);
        }
        match self
            .log
            .get(&(msg.view, msg.seq))
            .and_then(|s| s.preprepare)
        {
            Some(existing) if existing == d => self.log_ignored(&msg, AuditReason::Duplicate),
            Some(_) => self.log_ignored(&msg, AuditReason::ConflictingPrePrepare),
            None => self.accept_preprepare(msg.view, msg.seq, d),
        }
    }

    /// Record the proposal for `(view, seq)` and cast our own `Prepare`.
    fn accept_preprepare(&mut self, view: u64, seq: u64, digest: Digest) {
        let prepare = ConsensusMessage::new(MessageKind::Prepare, view, seq, digest, &self.id)
            .signed(&self.key);
        let slot = self.log.entry((view, seq)).or_default();
        slot.preprepare = Some(digest);
        slot.prepares.insert(self.id.clone(), prepare.clone());
        self.out.messages.push(prepare);
        self.check_progress(view, seq);
    }

    fn on_prepare(&mut self, msg: ConsensusMessage) {
        let key = (msg.view, msg.seq);
        let slot = self.log.entry(key).or_default();
        if slot.prepares.contains_key(&msg.sender_id) {
            return self.log_ignored(&msg, AuditReason::Duplicate);
        }
        slot.prepares.insert(msg.sender_id.clone(), msg);
        self.check_progress(key.0, key.1);
    }

    fn on_commit(&mut self, msg: ConsensusMessage) {
        let key = (msg.view, msg.seq);
        let slot = self.log.entry(key).or_default();
        if slot.commits.contains_key(&msg.sender_id) {
            return self.log_ignored(&msg, AuditReason::Duplicate);
        }
        slot.commits
            .insert(msg.sender_id.clone(), msg.payload_digest);
        self.check_progress(key.0, key.1);
    }

    fn check_progress(&mut self, view: u64, seq: u64) {
        let q = self.quorum();
        let Some(slot) = self.log.get_mut(&(view, seq)) else {
            return;
        };
        let Some(d) = slot.preprepare else {
            return;
        };
        if !slot.prepared {
            let matching: Vec<ConsensusMessage> = slot
                .prepares
                .values()
                .filter(|p| p.payload_digest == d)
                .take(q)
                .cloned()
                .collect();
            if matching.len() < q {
                return;
            }
            slot.prepared = true;
            slot.commits.insert(self.id.clone(), d);
            let proof = PreparedProof {
                seq,
                view,
                digest: d,
                prepares: matching,
            };
            let replace = self.prepared_certs.get(&seq).is_none_or(|p| p.view <= view);
            if replace {
                self.prepared_certs.insert(seq, proof);
            }
            let commit = ConsensusMessage::new(MessageKind::Commit, view, seq, d, &self.id)
                .signed(&self.key);
            self.out.messages.push(commit.clone());
            self.record_commit_vote(&commit);
        }
        let slot = self.log.get_mut(&(view, seq)).expect("slot exists");
        if slot.committed || slot.commits.values().filter(|c| **c == d).count() < q {
            return;
        }
        slot.committed = true;
        let first = *self.committed_seqs.entry(seq).or_insert(d);
        debug_assert_eq!(first, d, "two digests committed at seq {seq}");
        self.execute();
    }

    /// Count a signed commit toward a certificate for its sequence number.
    /// A quorum of matching commits means at least f + 1 honest replicas
    /// prepared the digest, so it is committed whatever our own view is.
    /// This is how a replica that lost messages catches up.
    fn record_commit_vote(&mut self, msg: &ConsensusMessage) {
        let seq = msg.seq;
        if seq < self.next_exec || self.committed_seqs.contains_key(&seq) {
            return;
        }
        let q = self.quorum();
        let votes = self
            .commit_votes
            .entry(seq)
            .or_default()
            .entry((msg.view, msg.payload_digest))
            .or_default();
        votes.insert(msg.sender_id.clone(), msg.clone());
        if votes.len() < q {
            return;
        }
        let cert: Vec<ConsensusMessage> = votes.values().take(q).cloned().collect();
        self.certificates.insert(seq, cert);
        self.committed_seqs.insert(seq, msg.payload_digest);
        self.execute();
    }

    /// Replay certificates for everything `from` has not executed yet.
    fn replay_certificates(&mut self, from: u64) {
        for cert in self.certificates.range(from..).map(|(_, c)| c) {
            self.out.messages.extend(cert.iter().cloned());
        }
    }

    fn execute(&mut self) {
        let mut progressed = false;
        while let Some(&d) = self.committed_seqs.get(&self.next_exec) {
            let seq = self.next_exec;
            self.committed.push((seq, d));
            self.out.committed.push((seq, d));
            self.executed.insert(d);
            if let Some(i) = self.pending_index.remove(&d) {
                self.pending.remove(&i);
            }
            self.next_exec += 1;
            progressed = true;
        }
        if progressed {
            self.commit_votes = self.commit_votes.split_off(&self.next_exec);
            self.propose_pending();
            self.timeout_ms = self.config.timeout_ms;
            if !self.pending.is_empty() || self.view_change_supported() {
                self.arm_timer();
            } else {
                self.timer = None;
            }
        }
    }

    /// As primary, propose every pending request not yet placed. A primary
    /// still catching up below the view's start waits, since some of its
    /// pending requests may already be executed there.
    fn propose_pending(&mut self) {
        if !self.view_active || !self.is_primary() || self.next_exec < self.view_low {
            return;
        }
        let todo: Vec<Digest> = self
            .pending
            .values()
            .filter(|d| !self.assigned.contains(*d))
            .copied()
            .collect();
        for d in todo {
            self.propose_inner(d);
        }
    }

    /// In a view change that at least f + 1 replicas (counting us) back.
    fn view_change_supported(&self) -> bool {
        !self.view_active
            && self
                .view_changes
                .get(&self.view)
                .is_some_and(|m| m.len() > self.config.f)
    }

    /// Fire the view-change timer if it has expired: move to the next view
    /// and broadcast `ViewChange`. Repeated expiry escalates the view once
    /// f + 1 replicas back the current view change; a replica nobody has
    /// joined repeats its `ViewChange` instead, since the others are
    /// probably making progress it missed.
    pub fn on_timeout(&mut self, now: u64) -> Output {
        self.tick(now);
        match self.timer {
            Some(t) if self.now >= t => {}
            _ => return Output::default(),
        }
        let cap = self
            .config
            .timeout_ms
            .saturating_mul(ConsensusConfig::MAX_BACKOFF);
        self.timeout_ms = self.timeout_ms.saturating_mul(2).min(cap);
        if self.view_active || self.view_change_supported() {
            self.start_view_change(self.view + 1);
        } else {
            // Same prepared proofs (nothing was prepared since), fresh
            // progress marker so peers replay only what is missing.
            let vc = self.view_change_message(self.view);
            self.view_changes
                .entry(self.view)
                .or_default()
                .insert(self.id.clone(), vc.clone());
            self.out.messages.push(vc);
            if self.pending.is_empty() {
                self.timer = None;
            } else {
                self.arm_timer();
            }
        }
        self.take_output()
    }

    fn start_view_change(&mut self, view: u64) {
        self.view = view;
        self.view_active = false;
        self.arm_timer();
        let vc = self.view_change_message(view);
        self.view_changes = self.view_changes.split_off(&view);
        self.view_changes
            .entry(view)
            .or_default()
            .insert(self.id.clone(), vc.clone());
        self.future.retain(|m| m.view >= view);
        self.out.messages.push(vc);
        self.maybe_send_new_view(view);
    }

    fn view_change_message(&self, view: u64) -> ConsensusMessage {
        let mut vc = ConsensusMessage::new(
            MessageKind::ViewChange,
            view,
            self.next_exec,
            Digest::ZERO,
            &self.id,
        );
        vc.prepared = self.prepared_certs.values().cloned().collect();
        vc.signed(&self.key)
    }

    fn check_sig(&self, msg: &ConsensusMessage) -> bool {
        let Some(key) = self.keys.get(&msg.sender_id) else {
            return false;
        };
        let entry = (msg.signing_digest(), msg.sig);
        if self.verified.borrow().contains(&entry) {
            return true;
        }
        let ok = key.verify(&entry.0, &msg.sig);
        if ok {
            self.verified.borrow_mut().insert(entry);
        }
        ok
    }

    fn valid_proof(&self, proof: &PreparedProof, before_view: u64) -> bool {
        if proof.view >= before_view || proof.prepares.len() < self.quorum() {
            return false;
        }
        let mut senders = BTreeSet::new();
        proof.prepares.iter().all(|p| {
            p.kind == MessageKind::Prepare
                && p.view == proof.view
                && p.seq == proof.seq
                && p.payload_digest == proof.digest
                && senders.insert(p.sender_id.as_str())
                && self.check_sig(p)
        })
    }

    fn valid_view_change(&self, vc: &ConsensusMessage, view: u64) -> bool {
        vc.kind == MessageKind::ViewChange
            && vc.view == view
            && vc.view_changes.is_empty()
            && vc.prepared.iter().all(|p| self.valid_proof(p, view))
    }

    fn on_view_change(&mut self, msg: ConsensusMessage) {
        // `seq` carries the sender's next sequence number to execute.
        if msg.seq < self.next_exec {
            self.replay_certificates(msg.seq);
        }
        let v = msg.view;
        if v < self.view || (v == self.view && self.view_active) {
            return self.log_ignored(&msg, AuditReason::StaleView);
        }
        if !self.valid_view_change(&msg, v) {
            return self.log_ignored(&msg, AuditReason::InvalidViewChange);
        }
        let entry = self.view_changes.entry(v).or_default();
        if entry.contains_key(&msg.sender_id) {
            return self.log_ignored(&msg, AuditReason::Duplicate);
        }
        entry.insert(msg.sender_id.clone(), msg);

        // Join a view change that f + 1 replicas have started.
        let ahead: BTreeSet<&String> = self
            .view_changes
            .range(self.view + 1..)
            .flat_map(|(_, m)| m.keys())
            .collect();
        if ahead.len() > self.config.f {
            let target = *self
                .view_changes
                .range(self.view + 1..)
                .next()
                .expect("non-empty")
                .0;
            self.start_view_change(target);
        }
        self.maybe_send_new_view(self.view);
    }

    fn maybe_send_new_view(&mut self, view: u64) {
        if self.view_active
            || self.view != view
            || self.config.primary_of(view) != self.id
            || self.new_view_sent.contains(&view)
        {
            return;
        }
        let Some(vcs) = self.view_changes.get(&view) else {
            return;
        };
        if vcs.len() < self.quorum() {
            return;
        }
        let chosen: Vec<ConsensusMessage> = vcs.values().take(self.quorum()).cloned().collect();
        let plan = NewViewPlan::from_view_changes(&chosen, self.config.f);
        let mut nv = ConsensusMessage::new(
            MessageKind::NewView,
            view,
            plan.slots.len() as u64,
            plan.digest(),
            &self.id,
        );
        nv.view_changes = chosen;
        self.new_view_sent.insert(view);
        self.send(nv);
        self.install_view(view, &plan);
    }

    fn on_new_view(&mut self, msg: ConsensusMessage) {
        let v = msg.view;
        if v < self.view || (v == self.view && self.view_active) {
            return self.log_ignored(&msg, AuditReason::StaleView);
        }
        let mut senders = BTreeSet::new();
        let well_formed = msg.sender_id == self.config.primary_of(v)
            && msg.prepared.is_empty()
            && msg.view_changes.len() >= self.quorum()
            && msg.view_changes.iter().all(|vc| {
                senders.insert(vc.sender_id.as_str())
                    && self.check_sig(vc)
                    && self.valid_view_change(vc, v)
            });
        if !well_formed {
            return self.log_ignored(&msg, AuditReason::InvalidNewView);
        }
        let plan = NewViewPlan::from_view_changes(&msg.view_changes, self.config.f);
        if msg.payload_digest != plan.digest() || msg.seq != plan.slots.len() as u64 {
            return self.log_ignored(&msg, AuditReason::InvalidNewView);
        }
        self.install_view(v, &plan);
    }

    fn install_view(&mut self, view: u64, plan: &NewViewPlan) {
        self.view = view;
        self.view_active = true;
        self.views_installed += 1;
        self.view_changes = self.view_changes.split_off(&(view + 1));
        self.assigned.clear();
        self.next_seq = plan.slots.last().map_or(plan.low, |(s, _)| s + 1);
        self.view_low = plan.low;
        for &(_, d) in &plan.slots {
            self.assigned.insert(d);
            self.known.insert(d);
        }
        for &(seq, d) in &plan.slots {
            let slot = self.log.entry((view, seq)).or_default();
            if slot.preprepare.is_none() {
                self.accept_preprepare(view, seq, d);
            }
        }
        self.propose_pending();
        if self.pending.is_empty() {
            self.timer = None;
        } else {
            self.arm_timer();
        }
        let buffered = std::mem::take(&mut self.future);
        for m in buffered {
            if m.view == view {
                self.dispatch(m);
            } else if m.view > view {
                self.future.push(m);
            }
        }
    }
}

/// What a new view starts from. Every sequence number below `low` is
/// already executed by at least one honest replica, since at most f of the
/// view changes can overstate their progress; replicas still missing those
/// catch up from commit certificates. From `low` up to the highest seq
/// prepared anywhere, the new primary re-proposes the digest prepared in
/// the highest view, or the null digest.
#[derive(Debug, PartialEq, Eq, Serialize)]
struct NewViewPlan {
    low: u64,
    slots: Vec<(u64, Digest)>,
}

impl NewViewPlan {
    fn from_view_changes(view_changes: &[ConsensusMessage], f: usize) -> Self {
        let mut progress: Vec<u64> = view_changes.iter().map(|vc| vc.seq).collect();
        progress.sort_unstable_by(|a, b| b.cmp(a));
        let low = progress.get(f).copied().unwrap_or(0);
        let mut best: BTreeMap<u64, (u64, Digest)> = BTreeMap::new();
        for proof in view_changes.iter().flat_map(|vc| &vc.prepared) {
            if proof.seq < low {
                continue;
            }
            let e = best.entry(proof.seq).or_insert((proof.view, proof.digest));
            if (proof.view, std::cmp::Reverse(proof.digest)) > (e.0, std::cmp::Reverse(e.1)) {
                *e = (proof.view, proof.digest);
            }
        }
        let slots = match best.last_key_value() {
            None => Vec::new(),
            Some((&max, _)) => (low..=max)
                .map(|s| (s, best.get(&s).map_or(Digest::ZERO, |e| e.1)))
                .collect(),
        };
        NewViewPlan { low, slots }
    }

    fn digest(&self) -> Digest {
        sha256(&to_canonical_bytes(self).expect("plan encodes"))
    }
}
