use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::ads::{Label, LabeledDataset, EARTH_RADIUS_KM};
use crate::authn::{
    issue_certificate, respond_to_challenge, AuthInputs, AuthSession, BiometricTemplate,
    EnrollmentStore, OtpSecret, OTP_KEY_LEN,
};
use crate::crypto::KeyPair;
use crate::model::{
    Amount, GeoPoint, Nonce, Principal, PrincipalKind, PrincipalRegistry, Transaction, TxnId,
};
use crate::pipeline::ScreeningContext;

pub const ISSUER_ID: &str = "issuer";
/// Agent id used for history entries made through some other agent.
pub const EXTERNAL_AGENT_ID: &str = "agent-external";

const DAY_MS: u64 = 86_400_000;
const HOUR_MS: f64 = 3_600_000.0;
/// Day number of the first workload transaction.
const BASE_DAY: u64 = 20_000;

pub struct UserSecrets {
    pub id: String,
    pub key: KeyPair,
    pub template: BiometricTemplate,
    pub otp_key: [u8; OTP_KEY_LEN],
}

/// Keys and enrollment material for one experiment.
pub struct Principals {
    pub issuer: KeyPair,
    pub replica_ids: Vec<String>,
    pub replicas: Vec<KeyPair>,
    pub agents: Vec<(String, KeyPair)>,
    pub users: Vec<UserSecrets>,
}

impl Principals {
    pub fn agent_key(&self, id: &str) -> Option<&KeyPair> {
        self.agents.iter().find(|(a, _)| a == id).map(|(_, k)| k)
    }

    pub fn user(&self, id: &str) -> Option<&UserSecrets> {
        self.users.iter().find(|u| u.id == id)
    }

    /// Fresh enrollment: templates, OTP secrets at counter 0 and agent
    /// certificates that never expire.
    pub fn enrollment(&self) -> EnrollmentStore {
        let mut store = EnrollmentStore::new(ISSUER_ID, self.issuer.public_key());
        for u in &self.users {
            store.enroll_user(&u.id, u.template.clone(), OtpSecret::new(u.otp_key));
        }
        for (id, key) in &self.agents {
            store.enroll_agent(issue_certificate(
                id,
                key.public_key(),
                ISSUER_ID,
                &self.issuer,
                u64::MAX,
            ));
        }
        store
    }

    pub fn registry(&self) -> PrincipalRegistry {
        let mut reg = PrincipalRegistry::new();
        let mut add = |id: &str, kind, key: &KeyPair| {
            reg.register(Principal {
                id: id.to_string(),
                kind,
                public_key: key.public_key(),
            })
            .expect("generated ids are unique")
        };
        add(ISSUER_ID, PrincipalKind::Admin, &self.issuer);
        for (id, k) in self.replica_ids.iter().zip(&self.replicas) {
            add(id, PrincipalKind::Replica, k);
        }
        for (id, k) in &self.agents {
            add(id, PrincipalKind::Agent, k);
        }
        for u in &self.users {
            add(&u.id, PrincipalKind::User, &u.key);
        }
        reg
    }
}

fn keypair(rng: &mut ChaCha8Rng) -> KeyPair {
    KeyPair::from_seed(rng.gen())
}

pub fn generate_principals(
    replica_ids: &[String],
    n_users: usize,
    n_agents: usize,
    seed: u64,
) -> Principals {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let issuer = keypair(&mut rng);
    let replicas = replica_ids.iter().map(|_| keypair(&mut rng)).collect();
    let agents = (0..n_agents)
        .map(|i| (format!("agent-{i:03}"), keypair(&mut rng)))
        .collect();
    let users = (0..n_users)
        .map(|i| UserSecrets {
            id: format!("user-{i:04}"),
            key: keypair(&mut rng),
            template: BiometricTemplate::random(&mut rng),
            otp_key: rng.gen(),
        })
        .collect();
    Principals {
        issuer,
        replica_ids: replica_ids.to_vec(),
        replicas,
        agents,
        users,
    }
}

/// A factor deliberately spoiled in a session.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BadFactor {
    Biometric,
    Otp,
    Agent,
}

pub struct WorkloadItem {
    pub txn: Transaction,
    pub context: ScreeningContext,
    pub label: Label,
    pub probe: BiometricTemplate,
    pub bad_factor: Option<BadFactor>,
}

impl WorkloadItem {
    /// Answer `session` as the enrolled user and agent would, spoiling
    /// `bad_factor` if set. `otp` is the user's current secret state.
    pub fn inputs(
        &self,
        session: &AuthSession,
        otp: &OtpSecret,
        principals: &Principals,
    ) -> AuthInputs {
        let agent = principals
            .agent_key(&self.txn.agent_id)
            .expect("workload agents are enrolled");
        let mut inputs = AuthInputs {
            probe: self.probe.clone(),
            otp_code: otp.current_code(),
            challenge_response: respond_to_challenge(&session.nonce, agent),
        };
        match self.bad_factor {
            Some(BadFactor::Biometric) => {
                let mut v = *self.probe.vector();
                v.iter_mut().for_each(|x| *x = -*x);
                inputs.probe = BiometricTemplate::normalized(v).expect("unit vector");
            }
            Some(BadFactor::Otp) => inputs.otp_code = otp.code_at(otp.counter + 10),
            Some(BadFactor::Agent) => {
                let impostor = KeyPair::from_seed(*session.nonce.digest().as_bytes());
                inputs.challenge_response = respond_to_challenge(&session.nonce, &impostor);
            }
            None => {}
        }
        inputs
    }
}

pub struct Workload {
    pub items: Vec<WorkloadItem>,
}

/// Point `distance_km` from `from` along `bearing` radians.
pub fn destination(from: GeoPoint, distance_km: f64, bearing: f64) -> GeoPoint {
    let (lat1, lon1) = (
        from.lat_degrees().to_radians(),
        from.lon_degrees().to_radians(),
    );
    let delta = distance_km / EARTH_RADIUS_KM;
    let lat2 = (lat1.sin() * delta.cos() + lat1.cos() * delta.sin() * bearing.cos()).asin();
    let lon2 = lon1
        + (bearing.sin() * delta.sin() * lat1.cos()).atan2(delta.cos() - lat1.sin() * lat2.sin());
    let lon = (lon2.to_degrees() + 540.0).rem_euclid(360.0) - 180.0;
    GeoPoint::from_degrees(lat2.to_degrees(), lon)
}

impl Workload {
    /// One transaction per dataset row, shaped so that feature extraction
    /// reproduces the row: the amount, hour, distance from home and session
    /// length are set directly, and a synthetic history supplies the 24-hour
    /// count and the agent interaction count.
    pub fn build(
        rows: &LabeledDataset,
        principals: &Principals,
        probe_noise: f64,
        invalid_auth_rate: f64,
        seed: u64,
    ) -> Workload {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let homes: Vec<GeoPoint> = principals
            .users
            .iter()
            .map(|_| {
                GeoPoint::from_degrees(rng.gen_range(-60.0..60.0), rng.gen_range(-180.0..180.0))
            })
            .collect();
        let n_users = principals.users.len();
        let items = rows
            .rows
            .iter()
            .enumerate()
            .map(|(i, row)| {
                let f = row.features;
                let s = rng.gen_range(0..n_users);
                let r = (s + rng.gen_range(1..n_users)) % n_users;
                let (agent_id, _) = &principals.agents[rng.gen_range(0..principals.agents.len())];
                let user = &principals.users[s];
                let day_ms = ((f.hour_of_day * HOUR_MS).round() as u64).min(DAY_MS - 1);
                let timestamp = (BASE_DAY + i as u64) * DAY_MS + day_ms;
                let bearing = rng.gen_range(0.0..std::f64::consts::TAU);
                let txn = Transaction {
                    txn_id: TxnId::from_u128(i as u128 + 1),
                    sender_id: user.id.clone(),
                    receiver_id: principals.users[r].id.clone(),
                    agent_id: agent_id.clone(),
                    amount: Amount::from_units(f.amount),
                    timestamp,
                    location: destination(homes[s], f.geo_distance_km, bearing),
                    nonce: Nonce(rng.gen()),
                };
                let history = synthetic_history(
                    &txn,
                    f.txn_count_24h as u64,
                    f.agent_interaction_count as u64,
                );
                let bad_factor = rng.gen_bool(invalid_auth_rate).then(|| {
                    [BadFactor::Biometric, BadFactor::Otp, BadFactor::Agent][rng.gen_range(0..3)]
                });
                WorkloadItem {
                    probe: user.template.noisy_probe(probe_noise, &mut rng),
                    context: ScreeningContext {
                        history,
                        home: homes[s],
                        session_duration_s: f.duration_s,
                    },
                    label: row.label,
                    bad_factor,
                    txn,
                }
            })
            .collect();
        Workload { items }
    }
}

/// Earlier transactions giving `count_24h` in the trailing day and
/// `agent_count` through the same agent.
fn synthetic_history(txn: &Transaction, count_24h: u64, agent_count: u64) -> Vec<Transaction> {
    let both = count_24h.min(agent_count);
    let entry = |k: u64, age_ms: u64, agent: &str| {
        let mut h = txn.clone();
        h.txn_id = TxnId::from_u128((u128::from_be_bytes(txn.txn_id.0) << 32) | k as u128);
        h.timestamp = txn.timestamp - age_ms;
        h.agent_id = agent.to_string();
        h
    };
    let mut out = Vec::new();
    for k in 0..count_24h {
        let agent = if k < both {
            txn.agent_id.as_str()
        } else {
            EXTERNAL_AGENT_ID
        };
        out.push(entry(k, (k + 1) * 60_000, agent));
    }
    for k in both..agent_count {
        out.push(entry(
            count_24h + k,
            DAY_MS + (k + 1) * 60_000,
            &txn.agent_id,
        ));
    }
    out
}
