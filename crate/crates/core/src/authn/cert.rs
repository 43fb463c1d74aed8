use serde::{Deserialize, Serialize};

use crate::canonical::to_canonical_bytes;
use crate::crypto::{sha256, sha256_parts, sign, verify, Digest, KeyPair, PublicKey, Signature};
use crate::hexfmt;

/// Binding of an agent id to its key, signed by a certificate authority.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgentCertificate {
    pub agent_id: String,
    pub agent_public_key: PublicKey,
    pub issuer_id: String,
    /// Simulated ms; the certificate is valid strictly before this instant.
    pub expiry: u64,
    pub issuer_sig: Signature,
}

#[derive(Serialize)]
struct CertBody<'a> {
    agent_id: &'a str,
    agent_public_key: &'a PublicKey,
    issuer_id: &'a str,
    expiry: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, thiserror::Error)]
pub enum CertError {
    #[error("issuer signature does not verify")]
    BadIssuerSignature,
    #[error("certificate expired")]
    Expired,
}

impl AgentCertificate {
    /// Digest the issuer signs.
    pub fn body_digest(&self) -> Digest {
        let body = CertBody {
            agent_id: &self.agent_id,
            agent_public_key: &self.agent_public_key,
            issuer_id: &self.issuer_id,
            expiry: self.expiry,
        };
        sha256(&to_canonical_bytes(&body).expect("certificate body encodes"))
    }

    pub fn verify(&self, issuer_key: &PublicKey, now: u64) -> Result<(), CertError> {
        if !verify(&self.body_digest(), &self.issuer_sig, issuer_key) {
            return Err(CertError::BadIssuerSignature);
        }
        if now >= self.expiry {
            return Err(CertError::Expired);
        }
        Ok(())
    }
}

pub fn issue_certificate(
    agent_id: &str,
    agent_public_key: PublicKey,
    issuer_id: &str,
    issuer_key: &KeyPair,
    expiry: u64,
) -> AgentCertificate {
    let mut cert = AgentCertificate {
        agent_id: agent_id.to_string(),
        agent_public_key,
        issuer_id: issuer_id.to_string(),
        expiry,
        issuer_sig: Signature::ZERO,
    };
    cert.issuer_sig = sign(&cert.body_digest(), issuer_key);
    cert
}

/// Fresh random challenge an agent must sign.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Debug, Serialize, Deserialize)]
pub struct ChallengeNonce(#[serde(with = "hexfmt")] pub [u8; 16]);

impl ChallengeNonce {
    pub fn digest(&self) -> Digest {
        sha256_parts(&[b"agent-challenge", &self.0])
    }
}

/// Agent side: sign the challenge.
pub fn respond_to_challenge(nonce: &ChallengeNonce, agent_key: &KeyPair) -> Signature {
    sign(&nonce.digest(), agent_key)
}

/// Verifier side: the certificate is issuer-valid and unexpired at `now`,
/// and `response` is the certified key's signature over the nonce.
pub fn agent_challenge_response(
    cert: &AgentCertificate,
    issuer_key: &PublicKey,
    nonce: &ChallengeNonce,
    response: &Signature,
    now: u64,
) -> bool {
    cert.verify(issuer_key, now).is_ok()
        && verify(&nonce.digest(), response, &cert.agent_public_key)
}
