use serde::{Deserialize, Serialize};

use crate::canonical::to_canonical_bytes;
use crate::crypto::{sha256, sign, Digest, KeyPair, Signature, VerifyingKeyCache};

#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Debug, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MessageKind {
    PrePrepare,
    Prepare,
    Commit,
    ViewChange,
    NewView,
}

/// A signed protocol message. `prepared` is only used by `ViewChange` and
/// `view_changes` only by `NewView`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConsensusMessage {
    pub kind: MessageKind,
    pub view: u64,
    pub seq: u64,
    pub payload_digest: Digest,
    pub sender_id: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub prepared: Vec<PreparedProof>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub view_changes: Vec<ConsensusMessage>,
    pub sig: Signature,
}

#[derive(Serialize)]
struct Body<'a> {
    kind: MessageKind,
    view: u64,
    seq: u64,
    payload_digest: &'a Digest,
    sender_id: &'a str,
    #[serde(skip_serializing_if = "<[_]>::is_empty")]
    prepared: &'a [PreparedProof],
    #[serde(skip_serializing_if = "<[_]>::is_empty")]
    view_changes: &'a [ConsensusMessage],
}

/// Evidence that `digest` was prepared at `(view, seq)`: a quorum of
/// signed matching `Prepare` messages from distinct replicas.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PreparedProof {
    pub seq: u64,
    pub view: u64,
    pub digest: Digest,
    pub prepares: Vec<ConsensusMessage>,
}

impl ConsensusMessage {
    /// An unsigned message; call [`ConsensusMessage::signed`] before sending.
    pub fn new(
        kind: MessageKind,
        view: u64,
        seq: u64,
        payload_digest: Digest,
        sender_id: &str,
    ) -> Self {
        ConsensusMessage {
            kind,
            view,
            seq,
            payload_digest,
            sender_id: sender_id.to_string(),
            prepared: Vec::new(),
            view_changes: Vec::new(),
            sig: Signature::ZERO,
        }
    }

    /// Hash of the canonical encoding of every field except `sig`.
    pub fn signing_digest(&self) -> Digest {
        let body = Body {
            kind: self.kind,
            view: self.view,
            seq: self.seq,
            payload_digest: &self.payload_digest,
            sender_id: &self.sender_id,
            prepared: &self.prepared,
            view_changes: &self.view_changes,
        };
        sha256(&to_canonical_bytes(&body).expect("message body encodes"))
    }

    pub fn signed(mut self, key: &KeyPair) -> Self {
        self.sig = sign(&self.signing_digest(), key);
        self
    }

    pub fn verify_sig(&self, key: &VerifyingKeyCache) -> bool {
        key.verify(&self.signing_digest(), &self.sig)
    }

    pub fn canonical_encode(&self) -> Vec<u8> {
        to_canonical_bytes(self).expect("message encodes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crypto::sha256;

    #[test]
    fn signature_covers_every_field() {
        let k = KeyPair::from_seed([1; 32]);
        let vk = VerifyingKeyCache::new(&k.public_key());
        let m = ConsensusMessage::new(MessageKind::Prepare, 2, 7, sha256(b"x"), "r1").signed(&k);
        assert!(m.verify_sig(&vk));
        let variants: [fn(&mut ConsensusMessage); 6] = [
            |m| m.kind = MessageKind::Commit,
            |m| m.view += 1,
            |m| m.seq += 1,
            |m| m.payload_digest = sha256(b"y"),
            |m| m.sender_id.push('x'),
            |m| m.view_changes.push(m.clone()),
        ];
        for change in variants {
            let mut c = m.clone();
            change(&mut c);
            assert!(!c.verify_sig(&vk));
        }
    }

    #[test]
    fn canonical_roundtrip() {
        let k = KeyPair::from_seed([2; 32]);
        let m = ConsensusMessage::new(MessageKind::PrePrepare, 0, 0, sha256(b"d"), "r0").signed(&k);
        let bytes = m.canonical_encode();
        let text = std::str::from_utf8(&bytes).unwrap();
        assert!(text.starts_with(r#"{"kind":"pre_prepare","payload_digest":""#));
        assert_eq!(
            serde_json::from_slice::<ConsensusMessage>(&bytes).unwrap(),
            m
        );
    }
}
