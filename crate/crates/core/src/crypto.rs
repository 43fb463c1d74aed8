//! Hashing and Ed25519 signatures.
//!
//! Transactions and blocks are hashed with SHA-256 over their canonical
//! encoding; signatures are always produced over a 32-byte [`Digest`].

use std::fmt;

use ed25519_dalek::{Signer, SigningKey, VerifyingKey};
use rand::{CryptoRng, RngCore};
use serde::{Deserialize, Serialize};
use sha2::{Digest as _, Sha256};
use thiserror::Error;

use crate::hexfmt;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum CryptoError {
    #[error("malformed key: {0}")]
    MalformedKey(String),
}

/// A SHA-256 digest.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Digest(#[serde(with = "hexfmt")] pub [u8; 32]);

impl Digest {
    pub const ZERO: Digest = Digest([0u8; 32]);

    pub fn as_bytes(&self) -> &[u8; 32] {
        &self.0
    }

    pub fn to_hex(&self) -> String {
        hexfmt::encode(&self.0)
    }

    pub fn from_hex(s: &str) -> Result<Self, String> {
        hexfmt::decode_array(s).map(Digest)
    }

    pub fn is_zero(&self) -> bool {
        self.0 == [0u8; 32]
    }
}

impl fmt::Debug for Digest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Digest({})", &self.to_hex()[..16])
    }
}

impl fmt::Display for Digest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

/// SHA-256 of an arbitrary byte string.
pub fn sha256(bytes: &[u8]) -> Digest {
    Digest(Sha256::digest(bytes).into())
}

/// SHA-256 of several byte strings, concatenated.
pub fn sha256_parts(parts: &[&[u8]]) -> Digest {
    let mut hasher = Sha256::new();
    for part in parts {
        hasher.update(part);
    }
    Digest(hasher.finalize().into())
}

/// A 32-byte Ed25519 verification key.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PublicKey(#[serde(with = "hexfmt")] pub [u8; 32]);

impl PublicKey {
    pub fn as_bytes(&self) -> &[u8; 32] {
        &self.0
    }

    pub fn to_hex(&self) -> String {
        hexfmt::encode(&self.0)
    }
}

impl fmt::Debug for PublicKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "PublicKey({})", &self.to_hex()[..16])
    }
}

/// A 64-byte Ed25519 signature.
#[derive(Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Signature(#[serde(with = "hexfmt")] pub [u8; 64]);

impl Signature {
    pub const ZERO: Signature = Signature([0u8; 64]);

    pub fn as_bytes(&self) -> &[u8; 64] {
        &self.0
    }
}

impl fmt::Debug for Signature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Signature({}..)", hexfmt::encode(&self.0[..8]))
    }
}

/// An Ed25519 signing key together with its verification key.
#[derive(Clone)]
pub struct KeyPair {
    signing: SigningKey,
}

impl KeyPair {
    /// Derive a key pair from a 32-byte secret seed.
    pub fn from_seed(seed: [u8; 32]) -> Self {
        Self {
            signing: SigningKey::from_bytes(&seed),
        }
    }

    /// Rebuild a key pair from both halves, checking that they belong together.
    pub fn from_parts(private_key: [u8; 32], public_key: [u8; 32]) -> Result<Self, CryptoError> {
        let pair = Self::from_seed(private_key);
        if pair.public_key().0 != public_key {
            return Err(CryptoError::MalformedKey(
                "public key is not derived from private key".into(),
            ));
        }
        Ok(pair)
    }

    pub fn generate<R: RngCore + CryptoRng>(rng: &mut R) -> Self {
        let mut seed = [0u8; 32];
        rng.fill_bytes(&mut seed);
        Self::from_seed(seed)
    }

    pub fn public_key(&self) -> PublicKey {
        PublicKey(self.signing.verifying_key().to_bytes())
    }

    pub fn private_key(&self) -> [u8; 32] {
        self.signing.to_bytes()
    }
}

impl fmt::Debug for KeyPair {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("KeyPair")
            .field("public_key", &self.public_key())
            .finish_non_exhaustive()
    }
}

/// Sign a digest. Ed25519 is deterministic, so equal inputs give equal bytes.
pub fn sign(digest: &Digest, key: &KeyPair) -> Signature {
    Signature(key.signing.sign(digest.as_bytes()).to_bytes())
}

/// Check `sig` over `digest` under `public_key`. Malformed keys and
/// non-canonical signatures are rejected rather than reported.
pub fn verify(digest: &Digest, sig: &Signature, public_key: &PublicKey) -> bool {
    VerifyingKeyCache::new(public_key).verify(digest, sig)
}

/// A public key decoded once for repeated verification.
#[derive(Clone, Debug)]
pub struct VerifyingKeyCache {
    key: Option<VerifyingKey>,
}

impl VerifyingKeyCache {
    pub fn new(public_key: &PublicKey) -> Self {
        VerifyingKeyCache {
            key: VerifyingKey::from_bytes(public_key.as_bytes()).ok(),
        }
    }

    pub fn verify(&self, digest: &Digest, sig: &Signature) -> bool {
        let Some(key) = &self.key else {
            return false;
        };
        let sig = ed25519_dalek::Signature::from_bytes(sig.as_bytes());
        key.verify_strict(digest.as_bytes(), &sig).is_ok()
    }
}
