//! The agent's decision: linear logits over the transaction features, a
//! softmax over {approve, deny, flag}, then argmax or a seeded sample.

use txnguard::ads::{TxnFeatures, FEATURE_DIM};
use txnguard::policy::{decide, softmax, Action, DecisionMode, PolicyWeights};

fn main() {
    let policy = PolicyWeights::standard();
    let contexts = [
        // amount, hour, count_24h, geo_km, agent_interactions, duration_s
        ("routine purchase", [25.0, 14.0, 2.0, 1.0, 12.0, 120.0]),
        ("burst of purchases", [40.0, 2.0, 50.0, 3.0, 1.0, 15.0]),
        (
            "huge, far from home",
            [20_000.0, 3.0, 1.0, 12_000.0, 0.0, 20.0],
        ),
    ];
    for (name, raw) in contexts {
        let x: [f64; FEATURE_DIM] = TxnFeatures::from_array(raw).to_array();
        let logits = policy.compute_logits(&x).expect("dimension matches");
        let dist = softmax(logits.values()).expect("finite logits");
        println!("{name}:");
        for a in Action::ALL {
            println!("  P({a:?}) = {:.4}", dist.prob(a));
        }
        let greedy = decide(&x, &policy, DecisionMode::Argmax).unwrap();
        let sampled: Vec<Action> = (0..5)
            .map(|seed| decide(&x, &policy, DecisionMode::Sample(seed)).unwrap())
            .collect();
        println!("  argmax: {greedy:?}; samples: {sampled:?}");
    }

    // Shifting every logit by a constant leaves the distribution unchanged.
    let z = [1000.0, 999.0, 990.0];
    let p = softmax(&z).unwrap();
    let q = softmax(&z.map(|v| v - 1000.0)).unwrap();
    println!("shifted logits agree: {:?} vs {:?}", p.probs(), q.probs());
}
