//! Build a small signed hash chain, write it as JSON lines, then flip bytes
//! and watch verification name the first broken invariant.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use txnguard::crypto::KeyPair;
use txnguard::ledger::{build_block, to_jsonl, verify_ledger_bytes, Chain};
use txnguard::model::{
    Amount, GeoPoint, Nonce, Principal, PrincipalKind, PrincipalRegistry, Transaction, TxnId,
};

fn main() {
    let key = KeyPair::from_seed([7; 32]);
    let mut registry = PrincipalRegistry::new();
    registry
        .register(Principal {
            id: "replica-0".into(),
            kind: PrincipalKind::Replica,
            public_key: key.public_key(),
        })
        .unwrap();

    let mut chain = Chain::new();
    for i in 0..5u128 {
        let txn = Transaction {
            txn_id: TxnId::from_u128(i + 1),
            sender_id: "alice".into(),
            receiver_id: "bookshop".into(),
            agent_id: "agent-000".into(),
            amount: Amount::from_cents(1_999 + i as i64),
            timestamp: 1_700_000_000_000 + i as u64 * 60_000,
            location: GeoPoint::from_degrees(52.52, 13.40),
            nonce: Nonce([i as u8; 8]),
        };
        let block = build_block(chain.tip(), vec![txn], "replica-0", &key).unwrap();
        chain.append(block).unwrap();
    }
    let bytes = to_jsonl(&chain);
    println!("{} blocks, {} bytes", chain.len(), bytes.len());
    println!(
        "pristine: {:?}",
        verify_ledger_bytes(&bytes, &registry).map(|c| c.len())
    );

    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..6 {
        let mut copy = bytes.clone();
        let pos = rng.gen_range(0..copy.len());
        copy[pos] ^= rng.gen_range(1..=255u8);
        match verify_ledger_bytes(&copy, &registry) {
            Ok(_) => println!("byte {pos:>5}: NOT detected"),
            Err(v) => println!("byte {pos:>5}: {v}"),
        }
    }
}
