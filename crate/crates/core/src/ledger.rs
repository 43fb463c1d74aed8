//! Hash-chained, signed, append-only ledger.
//!
//! Each block stores the transactions it commits together with their
//! SHA-256 digests, links to its predecessor by hash and carries the
//! proposer's Ed25519 signature over its own hash. Persistence is JSON Lines,
//! one canonical block per line.

use std::collections::HashSet;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::canonical;
use crate::crypto::{self, sha256, Digest, KeyPair, Signature};
use crate::model::{PrincipalKind, PrincipalRegistry, Transaction};

pub const GENESIS_PROPOSER: &str = "genesis";

/// SHA-256 over the canonical transaction encoding.
pub fn hash_txn(txn: &Transaction) -> Digest {
    sha256(&txn.canonical_encode())
}

#[derive(Clone, PartialEq, Eq, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Block {
    pub height: u64,
    pub prev_hash: Digest,
    pub txn_hashes: Vec<Digest>,
    pub txns: Vec<Transaction>,
    pub proposer_id: String,
    pub proposer_sig: Signature,
    pub block_hash: Digest,
}

#[derive(Serialize)]
struct BlockHeader<'a> {
    height: u64,
    prev_hash: &'a Digest,
    txn_hashes: &'a [Digest],
    txns: &'a [Transaction],
    proposer_id: &'a str,
}

impl Block {
    /// Hash of the block's canonical encoding without its hash and signature.
    pub fn compute_hash(&self) -> Digest {
        let header = BlockHeader {
            height: self.height,
            prev_hash: &self.prev_hash,
            txn_hashes: &self.txn_hashes,
            txns: &self.txns,
            proposer_id: &self.proposer_id,
        };
        sha256(&canonical::to_canonical_bytes(&header).expect("block header has no floats"))
    }

    /// The fixed bootstrap block: height 0, zero parent, no transactions.
    pub fn genesis() -> Block {
        let mut b = Block {
            height: 0,
            prev_hash: Digest::ZERO,
            txn_hashes: Vec::new(),
            txns: Vec::new(),
            proposer_id: GENESIS_PROPOSER.to_string(),
            proposer_sig: Signature::ZERO,
            block_hash: Digest::ZERO,
        };
        b.block_hash = b.compute_hash();
        b
    }

    pub fn canonical_encode(&self) -> Vec<u8> {
        canonical::to_canonical_bytes(self).expect("blocks contain no floats")
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum LedgerError {
    #[error("a block needs at least one transaction")]
    EmptyTransactions,
    #[error("block does not extend the chain tip: {0}")]
    Rejected(ChainViolation),
}

/// Build the successor of `prev` committing `txns`, signed by the proposer.
pub fn build_block(
    prev: &Block,
    txns: Vec<Transaction>,
    proposer_id: &str,
    proposer_key: &KeyPair,
) -> Result<Block, LedgerError> {
    if txns.is_empty() {
        return Err(LedgerError::EmptyTransactions);
    }
    let mut block = Block {
        height: prev.height + 1,
        prev_hash: prev.block_hash,
        txn_hashes: txns.iter().map(hash_txn).collect(),
        txns,
        proposer_id: proposer_id.to_string(),
        proposer_sig: Signature::ZERO,
        block_hash: Digest::ZERO,
    };
    block.block_hash = block.compute_hash();
    block.proposer_sig = crypto::sign(&block.block_hash, proposer_key);
    Ok(block)
}

#[derive(Clone, Copy, PartialEq, Eq, Debug, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ViolationReason {
    MissingGenesis,
    GenesisMismatch,
    MalformedRecord,
    NonCanonicalRecord,
    TruncatedRecord,
    EmptyBlock,
    TxnCountMismatch,
    TxnHashMismatch,
    BlockHashMismatch,
    UnknownProposer,
    BadSignature,
    PrevHashMismatch,
    HeightMismatch,
}

impl ViolationReason {
    pub fn as_str(&self) -> &'static str {
        match self {
            ViolationReason::MissingGenesis => "missing genesis",
            ViolationReason::GenesisMismatch => "genesis mismatch",
            ViolationReason::MalformedRecord => "malformed record",
            ViolationReason::NonCanonicalRecord => "non-canonical record",
            ViolationReason::TruncatedRecord => "truncated record",
            ViolationReason::EmptyBlock => "empty block",
            ViolationReason::TxnCountMismatch => "txn count mismatch",
            ViolationReason::TxnHashMismatch => "txn hash mismatch",
            ViolationReason::BlockHashMismatch => "block hash mismatch",
            ViolationReason::UnknownProposer => "unknown proposer",
            ViolationReason::BadSignature => "bad signature",
            ViolationReason::PrevHashMismatch => "prev-hash mismatch",
            ViolationReason::HeightMismatch => "height mismatch",
        }
    }
}

impl fmt::Display for ViolationReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// The lowest position at which the chain breaks, and why.
#[derive(Clone, Copy, PartialEq, Eq, Debug, Serialize, Deserialize)]
pub struct ChainViolation {
    pub height: u64,
    pub reason: ViolationReason,
}

impl fmt::Display for ChainViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "violation at height {}: {}", self.height, self.reason)
    }
}

impl std::error::Error for ChainViolation {}

fn violation(height: u64, reason: ViolationReason) -> ChainViolation {
    ChainViolation { height, reason }
}

/// Self-contained block checks: everything except linkage and the proposer's key.
fn check_block_contents(block: &Block, height: u64) -> Result<(), ChainViolation> {
    if block.txns.is_empty() {
        return Err(violation(height, ViolationReason::EmptyBlock));
    }
    if block.txn_hashes.len() != block.txns.len() {
        return Err(violation(height, ViolationReason::TxnCountMismatch));
    }
    if block
        .txns
        .iter()
        .zip(&block.txn_hashes)
        .any(|(t, h)| hash_txn(t) != *h)
    {
        return Err(violation(height, ViolationReason::TxnHashMismatch));
    }
    if block.compute_hash() != block.block_hash {
        return Err(violation(height, ViolationReason::BlockHashMismatch));
    }
    Ok(())
}

fn check_link(prev: &Block, block: &Block, height: u64) -> Result<(), ChainViolation> {
    if block.prev_hash != prev.block_hash {
        return Err(violation(height, ViolationReason::PrevHashMismatch));
    }
    if block.height != height {
        return Err(violation(height, ViolationReason::HeightMismatch));
    }
    Ok(())
}

/// Ordered blocks starting at the genesis block. Blocks can only be
/// appended; no API hands out mutable access to a committed block.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Chain {
    blocks: Vec<Block>,
}

impl Default for Chain {
    fn default() -> Self {
        Self::new()
    }
}

impl Chain {
    pub fn new() -> Self {
        Chain {
            blocks: vec![Block::genesis()],
        }
    }

    /// Wrap arbitrary blocks, e.g. ones read from disk. Use [`verify_chain`]
    /// before trusting the result.
    pub fn from_blocks_unchecked(blocks: Vec<Block>) -> Self {
        Chain { blocks }
    }

    pub fn blocks(&self) -> &[Block] {
        &self.blocks
    }

    pub fn tip(&self) -> &Block {
        self.blocks
            .last()
            .expect("chain always has a genesis block")
    }

    pub fn len(&self) -> usize {
        self.blocks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }

    /// Append a block that extends the current tip. Signatures are checked by
    /// [`verify_chain`], which needs the principal registry.
    pub fn append(&mut self, block: Block) -> Result<&Block, LedgerError> {
        let height = self.blocks.len() as u64;
        check_block_contents(&block, height).map_err(LedgerError::Rejected)?;
        check_link(self.tip(), &block, height).map_err(LedgerError::Rejected)?;
        self.blocks.push(block);
        Ok(self.tip())
    }

    pub fn into_blocks(self) -> Vec<Block> {
        self.blocks
    }
}

/// Check every block and link. Reports the lowest violating height.
pub fn verify_chain(chain: &Chain, registry: &PrincipalRegistry) -> Result<(), ChainViolation> {
    verify_chain_with(chain, registry, &VerifiedSignatures::default())
}

/// Proposer signatures already checked against a registry. Lets repeated
/// verification of a mostly unchanged chain skip the Ed25519 work for
/// blocks it has seen; every other check still runs.
#[derive(Clone, Debug, Default)]
pub struct VerifiedSignatures(HashSet<(String, Digest, Signature)>);

impl VerifiedSignatures {
    /// Verify `chain` and remember all its signatures.
    pub fn collect(chain: &Chain, registry: &PrincipalRegistry) -> Result<Self, ChainViolation> {
        verify_chain(chain, registry)?;
        Ok(VerifiedSignatures(
            chain.blocks()[1..]
                .iter()
                .map(|b| (b.proposer_id.clone(), b.block_hash, b.proposer_sig))
                .collect(),
        ))
    }

    fn contains(&self, b: &Block) -> bool {
        self.0
            .contains(&(b.proposer_id.clone(), b.block_hash, b.proposer_sig))
    }
}

/// [`verify_chain`] trusting signatures in `trusted`.
pub fn verify_chain_with(
    chain: &Chain,
    registry: &PrincipalRegistry,
    trusted: &VerifiedSignatures,
) -> Result<(), ChainViolation> {
    let blocks = chain.blocks();
    let Some(first) = blocks.first() else {
        return Err(violation(0, ViolationReason::MissingGenesis));
    };
    if *first != Block::genesis() {
        return Err(violation(0, ViolationReason::GenesisMismatch));
    }
    for (i, pair) in blocks.windows(2).enumerate() {
        let height = i as u64 + 1;
        let (prev, block) = (&pair[0], &pair[1]);
        check_block_contents(block, height)?;
        let key = match registry.get(&block.proposer_id) {
            Some(p) if p.kind == PrincipalKind::Replica => p.public_key,
            _ => return Err(violation(height, ViolationReason::UnknownProposer)),
        };
        if !trusted.contains(block) && !crypto::verify(&block.block_hash, &block.proposer_sig, &key)
        {
            return Err(violation(height, ViolationReason::BadSignature));
        }
        check_link(prev, block, height)?;
    }
    Ok(())
}

/// Serialize a chain as JSON Lines, one canonical block per line.
pub fn to_jsonl(chain: &Chain) -> Vec<u8> {
    let mut out = Vec::new();
    for block in chain.blocks() {
        out.extend_from_slice(&block.canonical_encode());
        out.push(b'\n');
    }
    out
}

/// Parse a JSON Lines ledger. Each line must be exactly the canonical
/// encoding of the block it describes and the file must end with a newline.
/// No cryptographic checks happen here.
pub fn read_jsonl(bytes: &[u8]) -> Result<Chain, ChainViolation> {
    if bytes.is_empty() {
        return Err(violation(0, ViolationReason::MissingGenesis));
    }
    let body = match bytes.strip_suffix(b"\n") {
        Some(body) => body,
        None => {
            let lines = bytes.split(|b| *b == b'\n').count() as u64;
            return Err(violation(lines - 1, ViolationReason::TruncatedRecord));
        }
    };
    let mut blocks = Vec::new();
    for (i, line) in body.split(|b| *b == b'\n').enumerate() {
        let height = i as u64;
        let block: Block = serde_json::from_slice(line)
            .map_err(|_| violation(height, ViolationReason::MalformedRecord))?;
        if block.canonical_encode() != line {
            return Err(violation(height, ViolationReason::NonCanonicalRecord));
        }
        blocks.push(block);
    }
    Ok(Chain::from_blocks_unchecked(blocks))
}

/// Parse and fully verify a JSON Lines ledger.
pub fn verify_ledger_bytes(
    bytes: &[u8],
    registry: &PrincipalRegistry,
) -> Result<Chain, ChainViolation> {
    verify_ledger_bytes_with(bytes, registry, &VerifiedSignatures::default())
}

/// [`verify_ledger_bytes`] trusting signatures in `trusted`.
pub fn verify_ledger_bytes_with(
    bytes: &[u8],
    registry: &PrincipalRegistry,
    trusted: &VerifiedSignatures,
) -> Result<Chain, ChainViolation> {
    let chain = read_jsonl(bytes)?;
    verify_chain_with(&chain, registry, trusted)?;
    Ok(chain)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crypto::PublicKey;
    use crate::model::testutil::random_txn;
    use crate::model::Principal;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn setup(n_blocks: usize) -> (Chain, PrincipalRegistry) {
        let key = KeyPair::from_seed([3u8; 32]);
        let mut reg = PrincipalRegistry::new();
        reg.register(Principal {
            id: "replica-0".into(),
            kind: PrincipalKind::Replica,
            public_key: key.public_key(),
        })
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut chain = Chain::new();
        for _ in 0..n_blocks {
            let b =
                build_block(chain.tip(), vec![random_txn(&mut rng)], "replica-0", &key).unwrap();
            chain.append(b).unwrap();
        }
        (chain, reg)
    }

    #[test]
    fn trusted_signatures_only_cover_seen_blocks() {
        let (chain, reg) = setup(3);
        let trusted = VerifiedSignatures::collect(&chain, &reg).unwrap();
        verify_chain_with(&chain, &reg, &trusted).unwrap();
        let mut blocks = chain.clone().into_blocks();
        blocks[2].proposer_sig = blocks[1].proposer_sig;
        let forged = Chain::from_blocks_unchecked(blocks);
        assert_eq!(
            verify_chain_with(&forged, &reg, &trusted).unwrap_err(),
            violation(2, ViolationReason::BadSignature)
        );
    }

    #[test]
    fn genesis_is_fixed() {
        assert_eq!(Block::genesis(), Block::genesis());
        let g = Block::genesis();
        assert_eq!(g.height, 0);
        assert!(g.prev_hash.is_zero());
        assert!(g.txns.is_empty());
    }

    #[test]
    fn build_links_to_previous() {
        let (chain, reg) = setup(2);
        let b1 = &chain.blocks()[1];
        assert_eq!(b1.height, 1);
        assert_eq!(b1.prev_hash, Block::genesis().block_hash);
        assert!(chain.blocks()[2].height > b1.height);
        assert!(verify_chain(&chain, &reg).is_ok());
    }

    #[test]
    fn build_is_deterministic_and_rejects_empty() {
        let key = KeyPair::from_seed([4u8; 32]);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let t = random_txn(&mut rng);
        let g = Block::genesis();
        let a = build_block(&g, vec![t.clone()], "r", &key).unwrap();
        let b = build_block(&g, vec![t], "r", &key).unwrap();
        assert_eq!(a.canonical_encode(), b.canonical_encode());
        assert_eq!(
            build_block(&g, vec![], "r", &key),
            Err(LedgerError::EmptyTransactions)
        );
    }

    #[test]
    fn ten_block_chain_verifies() {
        let (chain, reg) = setup(10);
        assert_eq!(chain.len(), 11);
        assert_eq!(verify_chain(&chain, &reg), Ok(()));
    }

    #[test]
    fn tampered_transaction_is_located() {
        let (chain, reg) = setup(10);
        let mut blocks = chain.into_blocks();
        blocks[3].txns[0].amount.0 ^= 1;
        let bad = Chain::from_blocks_unchecked(blocks);
        assert_eq!(
            verify_chain(&bad, &reg),
            Err(ChainViolation {
                height: 3,
                reason: ViolationReason::TxnHashMismatch
            })
        );
    }

    #[test]
    fn swapped_blocks_break_linkage() {
        let (chain, reg) = setup(10);
        let mut blocks = chain.into_blocks();
        blocks.swap(2, 3);
        let bad = Chain::from_blocks_unchecked(blocks);
        assert_eq!(
            verify_chain(&bad, &reg),
            Err(ChainViolation {
                height: 2,
                reason: ViolationReason::PrevHashMismatch
            })
        );
    }

    #[test]
    fn unknown_or_forged_proposer() {
        let (chain, _) = setup(3);
        let mut other = PrincipalRegistry::new();
        other
            .register(Principal {
                id: "replica-0".into(),
                kind: PrincipalKind::Replica,
                public_key: PublicKey(KeyPair::from_seed([8u8; 32]).public_key().0),
            })
            .unwrap();
        assert_eq!(
            verify_chain(&chain, &other).unwrap_err().reason,
            ViolationReason::BadSignature
        );
        assert_eq!(
            verify_chain(&chain, &PrincipalRegistry::new()).unwrap_err(),
            ChainViolation {
                height: 1,
                reason: ViolationReason::UnknownProposer
            }
        );
    }

    #[test]
    fn append_rejects_non_extending_blocks() {
        let (mut chain, _) = setup(2);
        let key = KeyPair::from_seed([3u8; 32]);
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let stale = build_block(
            &chain.blocks()[0],
            vec![random_txn(&mut rng)],
            "replica-0",
            &key,
        )
        .unwrap();
        assert!(matches!(chain.append(stale), Err(LedgerError::Rejected(_))));
        assert_eq!(chain.len(), 3);
    }

    #[test]
    fn jsonl_roundtrip_and_file_errors() {
        let (chain, reg) = setup(4);
        let bytes = to_jsonl(&chain);
        assert_eq!(verify_ledger_bytes(&bytes, &reg).unwrap(), chain);

        assert_eq!(
            read_jsonl(b"").unwrap_err().reason,
            ViolationReason::MissingGenesis
        );
        let truncated = &bytes[..bytes.len() - 10];
        let v = read_jsonl(truncated).unwrap_err();
        assert_eq!(v.height, 4);
        assert!(matches!(
            v.reason,
            ViolationReason::TruncatedRecord | ViolationReason::MalformedRecord
        ));

        // A trailing space still parses but is not canonical.
        let mut spaced = bytes.clone();
        let last = spaced.len() - 1;
        spaced.insert(last, b' ');
        assert_eq!(
            read_jsonl(&spaced).unwrap_err().reason,
            ViolationReason::NonCanonicalRecord
        );

        let mut upper = String::from_utf8(bytes).unwrap();
        let pos = upper.find("\"block_hash\":\"").unwrap() + 14;
        let c = upper[pos..]
            .chars()
            .find(|c| c.is_ascii_lowercase())
            .unwrap();
        let idx = pos + upper[pos..].find(c).unwrap();
        upper.replace_range(idx..idx + 1, &c.to_ascii_uppercase().to_string());
        assert!(read_jsonl(upper.as_bytes()).is_err());
    }

    #[test]
    fn txn_hashes_are_distinct() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let mut seen = std::collections::HashSet::new();
        for _ in 0..2_000 {
            let t = random_txn(&mut rng);
            assert!(seen.insert(hash_txn(&t)));
        }
    }
}
