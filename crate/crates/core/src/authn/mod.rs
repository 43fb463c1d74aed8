//! Multi-factor authentication: a biometric match, an HOTP one-time
//! password, and a certificate-backed challenge signed by the agent.

mod biometric;
mod cert;
mod otp;
mod session;

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::crypto::{PublicKey, Signature};

pub use biometric::{
    biometric_match, cosine_match, BiometricMatch, BiometricTemplate, DEFAULT_TAU, TEMPLATE_DIM,
};
pub use cert::{
    agent_challenge_response, issue_certificate, respond_to_challenge, AgentCertificate, CertError,
    ChallengeNonce,
};
pub use otp::{hotp, verify_otp, OtpSecret, OTP_DIGITS, OTP_KEY_LEN, OTP_WINDOW};
pub use session::{
    authenticate, AuthInputs, AuthResult, AuthSession, AuthStage, Credentials, FailureReason,
    SessionError,
};

#[derive(Debug, thiserror::Error)]
pub enum AuthError {
    #[error("template is not a unit vector: {0}")]
    NonUnitTemplate(String),
    #[error("{0} is not enrolled for this factor")]
    NotEnrolled(String),
    #[error("challenge was never issued or has already been used")]
    UnknownChallenge,
    #[error(transparent)]
    Session(#[from] SessionError),
    #[error("enrollment store: {0}")]
    Store(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

/// Factors enrolled for one principal. Users carry a template and an OTP
/// secret; agents carry a certificate.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnrollmentRecord {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub template: Option<BiometricTemplate>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub otp: Option<OtpSecret>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub certificate: Option<AgentCertificate>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnrollmentStore {
    pub issuer_id: String,
    pub issuer_public_key: PublicKey,
    pub principals: BTreeMap<String, EnrollmentRecord>,
}

impl EnrollmentStore {
    pub fn new(issuer_id: &str, issuer_public_key: PublicKey) -> Self {
        EnrollmentStore {
            issuer_id: issuer_id.to_string(),
            issuer_public_key,
            principals: BTreeMap::new(),
        }
    }

    pub fn enroll_user(&mut self, id: &str, template: BiometricTemplate, otp: OtpSecret) {
        let r = self.principals.entry(id.to_string()).or_default();
        r.template = Some(template);
        r.otp = Some(otp);
    }

    pub fn enroll_agent(&mut self, cert: AgentCertificate) {
        let r = self.principals.entry(cert.agent_id.clone()).or_default();
        r.certificate = Some(cert);
    }

    pub fn template(&self, id: &str) -> Option<&BiometricTemplate> {
        self.principals.get(id)?.template.as_ref()
    }

    pub fn otp(&self, id: &str) -> Option<&OtpSecret> {
        self.principals.get(id)?.otp.as_ref()
    }

    pub fn certificate(&self, id: &str) -> Option<&AgentCertificate> {
        self.principals.get(id)?.certificate.as_ref()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("enrollment store serializes")
    }

    pub fn from_json(s: &str) -> Result<Self, AuthError> {
        serde_json::from_str(s).map_err(|e| AuthError::Store(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, AuthError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn save(&self, path: &Path) -> Result<(), AuthError> {
        std::fs::write(path, self.to_json() + "\n")?;
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AuthConfig {
    /// Biometric acceptance threshold on cosine similarity.
    pub tau: f64,
    /// Lifetime of an issued session, simulated ms.
    pub session_ttl_ms: u64,
}

impl Default for AuthConfig {
    fn default() -> Self {
        AuthConfig {
            tau: DEFAULT_TAU,
            session_ttl_ms: 30_000,
        }
    }
}

/// Verifier service: owns the enrollment store, issues single-use
/// challenges and runs sessions against them.
#[derive(Debug)]
pub struct Authenticator {
    store: EnrollmentStore,
    config: AuthConfig,
    rng: ChaCha8Rng,
    outstanding: BTreeSet<ChallengeNonce>,
}

impl Authenticator {
    pub fn new(store: EnrollmentStore, config: AuthConfig, seed: u64) -> Self {
        Authenticator {
            store,
            config,
            rng: ChaCha8Rng::seed_from_u64(seed),
            outstanding: BTreeSet::new(),
        }
    }

    pub fn store(&self) -> &EnrollmentStore {
        &self.store
    }

    pub fn config(&self) -> &AuthConfig {
        &self.config
    }

    /// A fresh nonce not currently outstanding.
    pub fn fresh_nonce(&mut self) -> ChallengeNonce {
        loop {
            let mut n = [0u8; 16];
            self.rng.fill_bytes(&mut n);
            let n = ChallengeNonce(n);
            if !self.outstanding.contains(&n) {
                return n;
            }
        }
    }

    /// Open a session and remember its challenge until it is used.
    pub fn issue_challenge(&mut self, user_id: &str, agent_id: &str, now: u64) -> AuthSession {
        let nonce = self.fresh_nonce();
        self.outstanding.insert(nonce);
        AuthSession::new(
            user_id,
            agent_id,
            nonce,
            now.saturating_add(self.config.session_ttl_ms),
        )
    }

    fn user_factors(
        &mut self,
        user_id: &str,
    ) -> Result<(BiometricTemplate, &mut OtpSecret), AuthError> {
        let rec = self
            .store
            .principals
            .get_mut(user_id)
            .ok_or_else(|| AuthError::NotEnrolled(user_id.to_string()))?;
        match (&rec.template, &mut rec.otp) {
            (Some(t), Some(o)) => Ok((t.clone(), o)),
            _ => Err(AuthError::NotEnrolled(user_id.to_string())),
        }
    }

    fn agent_certificate(&self, agent_id: &str) -> Result<AgentCertificate, AuthError> {
        self.store
            .certificate(agent_id)
            .cloned()
            .ok_or_else(|| AuthError::NotEnrolled(agent_id.to_string()))
    }

    /// Run a session issued by [`Authenticator::issue_challenge`]. The
    /// challenge is consumed whatever the outcome.
    pub fn authenticate(
        &mut self,
        session: &mut AuthSession,
        inputs: &AuthInputs,
        now: u64,
    ) -> Result<AuthResult, AuthError> {
        if !self.outstanding.remove(&session.nonce) {
            return Err(AuthError::UnknownChallenge);
        }
        let cert = self.agent_certificate(&session.agent_id)?;
        let issuer_key = self.store.issuer_public_key;
        let tau = self.config.tau;
        let (template, otp) = self.user_factors(&session.user_id)?;
        let creds = Credentials {
            template: &template,
            otp,
            certificate: &cert,
            issuer_key: &issuer_key,
        };
        Ok(authenticate(session, creds, inputs, tau, now)?)
    }

    /// Step-up check for a held transaction: a fresh OTP followed by the
    /// agent's signature over `nonce`.
    pub fn step_up(
        &mut self,
        user_id: &str,
        agent_id: &str,
        nonce: &ChallengeNonce,
        otp_code: &str,
        response: &Signature,
        now: u64,
    ) -> Result<AuthResult, AuthError> {
        let cert = self.agent_certificate(agent_id)?;
        let issuer_key = self.store.issuer_public_key;
        let (_, otp) = self.user_factors(user_id)?;
        if !otp.verify(otp_code) {
            return Ok(AuthResult::Failed(FailureReason::Otp));
        }
        if cert.agent_id != agent_id
            || !agent_challenge_response(&cert, &issuer_key, nonce, response, now)
        {
            return Ok(AuthResult::Failed(FailureReason::Agent));
        }
        Ok(AuthResult::Authenticated)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crypto::KeyPair;

    fn setup() -> (Authenticator, KeyPair) {
        let ca = KeyPair::from_seed([1; 32]);
        let agent = KeyPair::from_seed([2; 32]);
        let mut store = EnrollmentStore::new("ca", ca.public_key());
        let t = BiometricTemplate::random(&mut ChaCha8Rng::seed_from_u64(1));
        store.enroll_user("alice", t, OtpSecret::new([3; 20]));
        store.enroll_agent(issue_certificate(
            "bot",
            agent.public_key(),
            "ca",
            &ca,
            u64::MAX,
        ));
        (Authenticator::new(store, AuthConfig::default(), 7), agent)
    }

    fn honest(a: &Authenticator, s: &AuthSession, agent: &KeyPair) -> AuthInputs {
        AuthInputs {
            probe: a.store().template("alice").unwrap().clone(),
            otp_code: a.store().otp("alice").unwrap().current_code(),
            challenge_response: respond_to_challenge(&s.nonce, agent),
        }
    }

    #[test]
    fn honest_session_and_single_use_challenge() {
        let (mut a, agent) = setup();
        let mut s = a.issue_challenge("alice", "bot", 0);
        let inp = honest(&a, &s, &agent);
        assert_eq!(
            a.authenticate(&mut s, &inp, 10).unwrap(),
            AuthResult::Authenticated
        );
        let mut again = s.clone();
        assert!(matches!(
            a.authenticate(&mut again, &inp, 10),
            Err(AuthError::UnknownChallenge)
        ));
    }

    #[test]
    fn replayed_otp_fails_next_session() {
        let (mut a, agent) = setup();
        let mut s = a.issue_challenge("alice", "bot", 0);
        let inp = honest(&a, &s, &agent);
        a.authenticate(&mut s, &inp, 1).unwrap();
        let mut s2 = a.issue_challenge("alice", "bot", 2);
        let mut inp2 = honest(&a, &s2, &agent);
        inp2.otp_code = inp.otp_code;
        assert_eq!(
            a.authenticate(&mut s2, &inp2, 3).unwrap(),
            AuthResult::Failed(FailureReason::Otp)
        );
    }

    #[test]
    fn step_up_paths() {
        let (mut a, agent) = setup();
        let n = a.fresh_nonce();
        let code = a.store().otp("alice").unwrap().current_code();
        let sig = respond_to_challenge(&n, &agent);
        assert_eq!(
            a.step_up("alice", "bot", &n, &code, &sig, 0).unwrap(),
            AuthResult::Authenticated
        );
        assert_eq!(
            a.step_up("alice", "bot", &n, &code, &sig, 0).unwrap(),
            AuthResult::Failed(FailureReason::Otp)
        );
        assert!(matches!(
            a.step_up("mallory", "bot", &n, &code, &sig, 0),
            Err(AuthError::NotEnrolled(_))
        ));
    }

    #[test]
    fn store_json_roundtrip() {
        let (a, _) = setup();
        let j = a.store().to_json();
        assert_eq!(&EnrollmentStore::from_json(&j).unwrap(), a.store());
        assert!(EnrollmentStore::from_json("{}").is_err());
    }
}
