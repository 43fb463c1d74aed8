use std::fmt;

use serde::{Deserialize, Serialize};

use super::biometric::{biometric_match, BiometricTemplate};
use super::cert::{agent_challenge_response, AgentCertificate, ChallengeNonce};
use super::otp::OtpSecret;
use crate::crypto::{PublicKey, Signature};

#[derive(Clone, Copy, PartialEq, Eq, Hash, Debug, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FailureReason {
    Biometric,
    Otp,
    Agent,
    Timeout,
}

impl FailureReason {
    pub fn as_str(self) -> &'static str {
        match self {
            FailureReason::Biometric => "biometric",
            FailureReason::Otp => "otp",
            FailureReason::Agent => "agent",
            FailureReason::Timeout => "timeout",
        }
    }
}

impl fmt::Display for FailureReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Copy, PartialEq, Eq, Debug, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AuthStage {
    BiometricPending,
    OtpPending,
    AgentChallengePending,
    Authenticated,
    Failed(FailureReason),
}

impl AuthStage {
    fn rank(self) -> u8 {
        match self {
            AuthStage::BiometricPending => 0,
            AuthStage::OtpPending => 1,
            AuthStage::AgentChallengePending => 2,
            AuthStage::Authenticated | AuthStage::Failed(_) => 3,
        }
    }

    pub fn is_terminal(self) -> bool {
        self.rank() == 3
    }
}

#[derive(Clone, Copy, PartialEq, Eq, Debug, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AuthResult {
    Authenticated,
    Failed(FailureReason),
}

impl AuthResult {
    pub fn is_authenticated(self) -> bool {
        self == AuthResult::Authenticated
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, thiserror::Error)]
pub enum SessionError {
    #[error("factor submitted out of order: session is at {0:?}")]
    OutOfOrder(AuthStage),
}

/// One authentication attempt by a user acting through an agent. Stages
/// only move forward and a failed session stays failed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AuthSession {
    pub user_id: String,
    pub agent_id: String,
    stage: AuthStage,
    pub nonce: ChallengeNonce,
    /// Simulated ms; factors submitted after this instant fail with "timeout".
    pub deadline: u64,
}

impl AuthSession {
    pub fn new(user_id: &str, agent_id: &str, nonce: ChallengeNonce, deadline: u64) -> Self {
        AuthSession {
            user_id: user_id.to_string(),
            agent_id: agent_id.to_string(),
            stage: AuthStage::BiometricPending,
            nonce,
            deadline,
        }
    }

    pub fn stage(&self) -> AuthStage {
        self.stage
    }

    pub fn result(&self) -> Option<AuthResult> {
        match self.stage {
            AuthStage::Authenticated => Some(AuthResult::Authenticated),
            AuthStage::Failed(r) => Some(AuthResult::Failed(r)),
            _ => None,
        }
    }

    fn enter(&mut self, expected: AuthStage, now: u64) -> Result<bool, SessionError> {
        if self.stage != expected {
            return Err(SessionError::OutOfOrder(self.stage));
        }
        if now > self.deadline {
            self.stage = AuthStage::Failed(FailureReason::Timeout);
            return Ok(false);
        }
        Ok(true)
    }

    fn advance(&mut self, ok: bool, next: AuthStage, reason: FailureReason) -> AuthStage {
        let to = if ok { next } else { AuthStage::Failed(reason) };
        debug_assert!(to.rank() > self.stage.rank());
        self.stage = to;
        to
    }

    pub fn submit_biometric(
        &mut self,
        enrolled: &BiometricTemplate,
        probe: &BiometricTemplate,
        tau: f64,
        now: u64,
    ) -> Result<AuthStage, SessionError> {
        if !self.enter(AuthStage::BiometricPending, now)? {
            return Ok(self.stage);
        }
        let ok = biometric_match(enrolled, probe, tau).accepted;
        Ok(self.advance(ok, AuthStage::OtpPending, FailureReason::Biometric))
    }

    pub fn submit_otp(
        &mut self,
        secret: &mut OtpSecret,
        code: &str,
        now: u64,
    ) -> Result<AuthStage, SessionError> {
        if !self.enter(AuthStage::OtpPending, now)? {
            return Ok(self.stage);
        }
        let ok = secret.verify(code);
        Ok(self.advance(ok, AuthStage::AgentChallengePending, FailureReason::Otp))
    }

    pub fn submit_agent_response(
        &mut self,
        cert: &AgentCertificate,
        issuer_key: &PublicKey,
        response: &Signature,
        now: u64,
    ) -> Result<AuthStage, SessionError> {
        if !self.enter(AuthStage::AgentChallengePending, now)? {
            return Ok(self.stage);
        }
        let ok = cert.agent_id == self.agent_id
            && agent_challenge_response(cert, issuer_key, &self.nonce, response, now);
        Ok(self.advance(ok, AuthStage::Authenticated, FailureReason::Agent))
    }
}

/// What the verifier holds for one session.
pub struct Credentials<'a> {
    pub template: &'a BiometricTemplate,
    pub otp: &'a mut OtpSecret,
    pub certificate: &'a AgentCertificate,
    pub issuer_key: &'a PublicKey,
}

/// What the user and agent present.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AuthInputs {
    pub probe: BiometricTemplate,
    pub otp_code: String,
    pub challenge_response: Signature,
}

/// Run all three factors in order, stopping at the first failure.
pub fn authenticate(
    session: &mut AuthSession,
    creds: Credentials<'_>,
    inputs: &AuthInputs,
    tau: f64,
    now: u64,
) -> Result<AuthResult, SessionError> {
    session.submit_biometric(creds.template, &inputs.probe, tau, now)?;
    if session.stage() == AuthStage::OtpPending {
        session.submit_otp(creds.otp, &inputs.otp_code, now)?;
    }
    if session.stage() == AuthStage::AgentChallengePending {
        session.submit_agent_response(
            creds.certificate,
            creds.issuer_key,
            &inputs.challenge_response,
            now,
        )?;
    }
    Ok(session.result().expect("all factors evaluated"))
}
