//! Deterministic discrete-event network for driving [`Replica`]s.
//!
//! Every source of nondeterminism is a single seeded RNG, and events with
//! the same delivery time leave the queue in arrival order, so a run is a
//! pure function of its configuration and workload.

use std::cmp::Reverse;
use std::collections::{BTreeMap, BTreeSet, BinaryHeap};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::consensus::{
    ConsensusConfig, ConsensusError, ConsensusMessage, MessageKind, Output, Replica,
};
use crate::crypto::{sha256_parts, Digest, KeyPair, PublicKey};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ByzantineBehavior {
    /// Send a conflicting digest to the upper half of the replica set.
    Equivocate,
    /// Send nothing.
    Mute,
    /// Hold every outgoing message back by this many ms.
    Delay(u64),
}

/// While active, messages between `members` and everyone else are lost.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Partition {
    pub members: BTreeSet<String>,
    pub start_ms: u64,
    pub end_ms: u64,
}

impl Partition {
    fn separates(&self, a: &str, b: &str, now: u64) -> bool {
        (self.start_ms..self.end_ms).contains(&now)
            && self.members.contains(a) != self.members.contains(b)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetConfig {
    pub seed: u64,
    /// Inclusive uniform latency range, ms.
    pub latency_ms: (u64, u64),
    pub drop_prob: f64,
    pub partitions: Vec<Partition>,
    pub byzantine: BTreeMap<String, ByzantineBehavior>,
}

impl Default for NetConfig {
    fn default() -> Self {
        NetConfig {
            seed: 0,
            latency_ms: (1, 4),
            drop_prob: 0.0,
            partitions: Vec::new(),
            byzantine: BTreeMap::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum NetError {
    #[error("drop probability {0} outside [0, 1]")]
    DropProbability(f64),
    #[error("latency range ({0}, {1}) is inverted")]
    LatencyRange(u64, u64),
    #[error("{byzantine} Byzantine replicas exceed the fault budget f = {f}")]
    FaultBudget { byzantine: usize, f: usize },
    #[error("unknown replica {0}")]
    UnknownReplica(String),
    #[error("expected {expected} replica keys, got {got}")]
    KeyCount { expected: usize, got: usize },
    #[error(transparent)]
    Consensus(#[from] ConsensusError),
}

impl NetConfig {
    pub fn validate(&self, consensus: &ConsensusConfig) -> Result<(), NetError> {
        if !(0.0..=1.0).contains(&self.drop_prob) {
            return Err(NetError::DropProbability(self.drop_prob));
        }
        if self.latency_ms.0 > self.latency_ms.1 {
            return Err(NetError::LatencyRange(self.latency_ms.0, self.latency_ms.1));
        }
        if self.byzantine.len() > consensus.f {
            return Err(NetError::FaultBudget {
                byzantine: self.byzantine.len(),
                f: consensus.f,
            });
        }
        let ids = self
            .byzantine
            .keys()
            .chain(self.partitions.iter().flat_map(|p| &p.members));
        for id in ids {
            if !consensus.contains(id) {
                return Err(NetError::UnknownReplica(id.clone()));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct Queued {
    deliver_at: u64,
    order: u64,
    to: usize,
    from: usize,
    msg: ConsensusMessage,
}

impl Ord for Queued {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        (self.deliver_at, self.order).cmp(&(other.deliver_at, other.order))
    }
}

impl PartialOrd for Queued {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

/// Pending deliveries, popped in `(deliver_at, arrival order)` order.
#[derive(Debug, Default)]
pub struct EventQueue {
    heap: BinaryHeap<Reverse<Queued>>,
    arrivals: u64,
}

impl EventQueue {
    fn push(&mut self, deliver_at: u64, from: usize, to: usize, msg: ConsensusMessage) {
        let order = self.arrivals;
        self.arrivals += 1;
        self.heap.push(Reverse(Queued {
            deliver_at,
            order,
            to,
            from,
            msg,
        }));
    }

    fn pop(&mut self) -> Option<Queued> {
        self.heap.pop().map(|Reverse(q)| q)
    }

    pub fn next_time(&self) -> Option<u64> {
        self.heap.peek().map(|Reverse(q)| q.deliver_at)
    }

    pub fn len(&self) -> usize {
        self.heap.len()
    }

    pub fn is_empty(&self) -> bool {
        self.heap.is_empty()
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CommitEvent {
    pub at: u64,
    pub replica: String,
    pub seq: u64,
    pub digest: Digest,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum TraceEvent {
    Deliver {
        at: u64,
        from: String,
        to: String,
        kind: MessageKind,
        view: u64,
        seq: u64,
        digest: Digest,
    },
    Drop {
        at: u64,
        from: String,
        to: String,
        kind: MessageKind,
        partitioned: bool,
    },
    Timeout {
        at: u64,
        replica: String,
        view: u64,
    },
    Commit(CommitEvent),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StepResult {
    Delivered,
    TimerFired,
    /// Nothing left to deliver and no honest timer armed.
    Idle,
}

/// Summary of a [`Simulation::run_until_quiescent`] call.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunReport {
    /// Commit events produced during this run, in simulation order.
    pub commits: Vec<CommitEvent>,
    /// Messages delivered during this run.
    pub message_count: u64,
    pub steps: u64,
    pub final_time: u64,
    pub quiescent: bool,
}

/// Two honest replicas executed different digests at one sequence number.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SafetyViolation {
    pub seq: u64,
    pub replicas: (String, String),
    pub digests: (Digest, Digest),
}

/// The digest an equivocating replica sends to the second half.
pub fn equivocated_digest(d: &Digest) -> Digest {
    sha256_parts(&[b"equivocate", d.as_bytes()])
}

pub struct Simulation {
    config: ConsensusConfig,
    net: NetConfig,
    replicas: Vec<Replica>,
    keys: Vec<KeyPair>,
    behavior: Vec<Option<ByzantineBehavior>>,
    /// Replica indices whose sorted-id position falls in the upper half.
    upper_half: Vec<bool>,
    queue: EventQueue,
    rng: ChaCha8Rng,
    now: u64,
    delivered: u64,
    commits: Vec<CommitEvent>,
    trace: Option<Vec<TraceEvent>>,
}

impl Simulation {
    /// `keys[i]` belongs to `config.replica_ids[i]`.
    pub fn new(
        config: ConsensusConfig,
        net: NetConfig,
        keys: Vec<KeyPair>,
    ) -> Result<Self, NetError> {
        config.validate()?;
        net.validate(&config)?;
        if keys.len() != config.n() {
            return Err(NetError::KeyCount {
                expected: config.n(),
                got: keys.len(),
            });
        }
        let directory: BTreeMap<String, PublicKey> = config
            .replica_ids
            .iter()
            .zip(&keys)
            .map(|(id, k)| (id.clone(), k.public_key()))
            .collect();
        let replicas = config
            .replica_ids
            .iter()
            .zip(&keys)
            .map(|(id, k)| Replica::new(config.clone(), id, k.clone(), &directory))
            .collect::<Result<Vec<_>, _>>()?;
        let behavior = config
            .replica_ids
            .iter()
            .map(|id| net.byzantine.get(id).copied())
            .collect();
        let mut sorted: Vec<&String> = config.replica_ids.iter().collect();
        sorted.sort();
        let half = config.n() / 2;
        let upper_half = config
            .replica_ids
            .iter()
            .map(|id| sorted.iter().position(|s| *s == id).expect("present") >= half)
            .collect();
        Ok(Simulation {
            rng: ChaCha8Rng::seed_from_u64(net.seed),
            config,
            net,
            replicas,
            keys,
            behavior,
            upper_half,
            queue: EventQueue::default(),
            now: 0,
            delivered: 0,
            commits: Vec::new(),
            trace: None,
        })
    }

    /// Keys derived from `key_seed`, one per replica.
    pub fn generate_keys(n: usize, key_seed: u64) -> Vec<KeyPair> {
        let mut rng = ChaCha8Rng::seed_from_u64(key_seed);
        (0..n).map(|_| KeyPair::generate(&mut rng)).collect()
    }

    /// Record every delivery, drop, timeout and commit from now on.
    pub fn enable_trace(&mut self) {
        self.trace.get_or_insert_with(Vec::new);
    }

    pub fn trace(&self) -> &[TraceEvent] {
        self.trace.as_deref().unwrap_or(&[])
    }

    pub fn trace_jsonl(&self) -> Vec<u8> {
        let mut out = Vec::new();
        for e in self.trace() {
            serde_json::to_writer(&mut out, e).expect("trace event serializes");
            out.push(b'\n');
        }
        out
    }

    pub fn config(&self) -> &ConsensusConfig {
        &self.config
    }

    pub fn net_config(&self) -> &NetConfig {
        &self.net
    }

    pub fn now(&self) -> u64 {
        self.now
    }

    /// Move the clock forward, e.g. to the arrival time of a new request.
    pub fn advance_to(&mut self, t: u64) {
        self.now = self.now.max(t);
    }

    pub fn replicas(&self) -> &[Replica] {
        &self.replicas
    }

    pub fn replica_key(&self, i: usize) -> &KeyPair {
        &self.keys[i]
    }

    pub fn is_honest(&self, i: usize) -> bool {
        self.behavior[i].is_none()
    }

    pub fn honest_indices(&self) -> Vec<usize> {
        (0..self.replicas.len())
            .filter(|&i| self.is_honest(i))
            .collect()
    }

    /// All commit events so far.
    pub fn commits(&self) -> &[CommitEvent] {
        &self.commits
    }

    pub fn messages_delivered(&self) -> u64 {
        self.delivered
    }

    pub fn queue(&self) -> &EventQueue {
        &self.queue
    }

    /// Index of the primary as seen by the most advanced honest replica.
    pub fn current_primary(&self) -> usize {
        let view = self
            .honest_indices()
            .into_iter()
            .map(|i| self.replicas[i].view())
            .max()
            .unwrap_or(0);
        let id = self.config.primary_of(view);
        self.config
            .replica_ids
            .iter()
            .position(|r| r == id)
            .expect("primary is a replica")
    }

    /// Largest number of view changes any honest replica has installed.
    pub fn view_changes(&self) -> u64 {
        self.honest_indices()
            .into_iter()
            .map(|i| self.replicas[i].views_installed())
            .max()
            .unwrap_or(0)
    }

    /// Honest replicas that have executed `digest`.
    pub fn honest_commit_count(&self, digest: &Digest) -> usize {
        self.honest_indices()
            .into_iter()
            .filter(|&i| self.replicas[i].has_executed(digest))
            .count()
    }

    /// A client broadcasts a request to every replica.
    pub fn submit_request(&mut self, digest: Digest) {
        for i in 0..self.replicas.len() {
            let out = self.replicas[i].on_request(digest, self.now);
            self.route(i, out);
        }
    }

    fn route(&mut self, from: usize, out: Output) {
        for (seq, digest) in out.committed {
            let e = CommitEvent {
                at: self.now,
                replica: self.config.replica_ids[from].clone(),
                seq,
                digest,
            };
            if let Some(t) = &mut self.trace {
                t.push(TraceEvent::Commit(e.clone()));
            }
            self.commits.push(e);
        }
        for msg in out.messages {
            self.broadcast(from, msg);
        }
    }

    /// Hand `msg` from replica `from` to every other replica, applying the
    /// sender's Byzantine behavior, partitions, loss and latency.
    fn broadcast(&mut self, from: usize, msg: ConsensusMessage) {
        let extra = match self.behavior[from] {
            Some(ByzantineBehavior::Mute) => return,
            Some(ByzantineBehavior::Delay(ms)) => ms,
            _ => 0,
        };
        let forged = (self.behavior[from] == Some(ByzantineBehavior::Equivocate)).then(|| {
            let mut m = msg.clone();
            m.payload_digest = equivocated_digest(&msg.payload_digest);
            m.signed(&self.keys[from])
        });
        let (lo, hi) = self.net.latency_ms;
        for to in 0..self.replicas.len() {
            if to == from {
                continue;
            }
            let (from_id, to_id) = (&self.config.replica_ids[from], &self.config.replica_ids[to]);
            let partitioned = self
                .net
                .partitions
                .iter()
                .any(|p| p.separates(from_id, to_id, self.now));
            let lost = self.rng.gen_bool(self.net.drop_prob);
            let latency = self.rng.gen_range(lo..=hi);
            if partitioned || lost {
                if let Some(t) = &mut self.trace {
                    t.push(TraceEvent::Drop {
                        at: self.now,
                        from: from_id.clone(),
                        to: to_id.clone(),
                        kind: msg.kind,
                        partitioned,
                    });
                }
                continue;
            }
            let m = match &forged {
                Some(f) if self.upper_half[to] => f.clone(),
                _ => msg.clone(),
            };
            self.queue.push(self.now + latency + extra, from, to, m);
        }
    }

    /// Next armed timer among the given replicas, earliest first, ties to
    /// the lowest index.
    fn next_timer(&self, honest_only: bool) -> Option<(u64, usize)> {
        (0..self.replicas.len())
            .filter(|&i| !honest_only || self.is_honest(i))
            .filter_map(|i| self.replicas[i].timer().map(|t| (t, i)))
            .min()
    }

    /// Process the earliest pending event. A timer fires only if it is due
    /// strictly before the next delivery.
    pub fn step(&mut self) -> StepResult {
        let next_msg = self.queue.next_time();
        let honest_timer = self.next_timer(true).map(|(t, _)| t);
        let bound = match (next_msg, honest_timer) {
            (None, None) => return StepResult::Idle,
            (Some(a), Some(b)) => a.min(b),
            (a, b) => a.or(b).expect("one is set"),
        };
        if let Some((t, i)) = self.next_timer(false) {
            if t <= bound && next_msg.is_none_or(|m| t < m) {
                self.now = self.now.max(t);
                if let Some(tr) = &mut self.trace {
                    tr.push(TraceEvent::Timeout {
                        at: self.now,
                        replica: self.config.replica_ids[i].clone(),
                        view: self.replicas[i].view(),
                    });
                }
                let out = self.replicas[i].on_timeout(self.now);
                self.route(i, out);
                return StepResult::TimerFired;
            }
        }
        let q = self.queue.pop().expect("a message is due");
        self.now = self.now.max(q.deliver_at);
        self.delivered += 1;
        if let Some(tr) = &mut self.trace {
            tr.push(TraceEvent::Deliver {
                at: self.now,
                from: self.config.replica_ids[q.from].clone(),
                to: self.config.replica_ids[q.to].clone(),
                kind: q.msg.kind,
                view: q.msg.view,
                seq: q.msg.seq,
                digest: q.msg.payload_digest,
            });
        }
        let out = self.replicas[q.to].handle_message(q.msg, self.now);
        self.route(q.to, out);
        StepResult::Delivered
    }

    /// Process every event due at or before `t`, then set the clock to `t`.
    pub fn run_until(&mut self, t: u64) {
        loop {
            let next = [
                self.queue.next_time(),
                self.next_timer(false).map(|(t, _)| t),
            ]
            .into_iter()
            .flatten()
            .min();
            match next {
                Some(n) if n <= t => {
                    if self.step() == StepResult::Idle {
                        break;
                    }
                }
                _ => break,
            }
        }
        self.advance_to(t);
    }

    /// Step until idle or `max_steps` events have been processed.
    pub fn run_until_quiescent(&mut self, max_steps: u64) -> RunReport {
        let commits_before = self.commits.len();
        let delivered_before = self.delivered;
        let mut steps = 0;
        let mut quiescent = false;
        while steps < max_steps {
            if self.step() == StepResult::Idle {
                quiescent = true;
                break;
            }
            steps += 1;
        }
        if !quiescent && self.queue.is_empty() && self.next_timer(true).is_none() {
            quiescent = true;
        }
        RunReport {
            commits: self.commits[commits_before..].to_vec(),
            message_count: self.delivered - delivered_before,
            steps,
            final_time: self.now,
            quiescent,
        }
    }

    /// Compare the execution logs of all honest replicas seq by seq.
    pub fn check_agreement(&self) -> Result<(), SafetyViolation> {
        let mut first: BTreeMap<u64, (usize, Digest)> = BTreeMap::new();
        for i in self.honest_indices() {
            for &(seq, d) in self.replicas[i].committed() {
                let (j, e) = *first.entry(seq).or_insert((i, d));
                if e != d {
                    return Err(SafetyViolation {
                        seq,
                        replicas: (
                            self.config.replica_ids[j].clone(),
                            self.config.replica_ids[i].clone(),
                        ),
                        digests: (e, d),
                    });
                }
            }
        }
        Ok(())
    }
}
