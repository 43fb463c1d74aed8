//! Four PBFT replicas tolerate one Byzantine replica. Each run submits a few
//! requests and reports commits, view changes and the agreement check.

use txnguard::consensus::ConsensusConfig;
use txnguard::crypto::sha256;
use txnguard::netsim::{ByzantineBehavior, NetConfig, Simulation};

fn main() {
    let scenarios = [
        ("honest", None),
        ("mute primary", Some(("replica-0", ByzantineBehavior::Mute))),
        (
            "equivocating primary",
            Some(("replica-0", ByzantineBehavior::Equivocate)),
        ),
        (
            "slow backup",
            Some(("replica-2", ByzantineBehavior::Delay(300))),
        ),
    ];
    for (name, fault) in scenarios {
        let config = ConsensusConfig::with_default_ids(1, 100);
        let net = NetConfig {
            seed: 9,
            latency_ms: (1, 10),
            drop_prob: 0.01,
            byzantine: fault
                .map(|(id, b)| [(id.to_string(), b)].into())
                .unwrap_or_default(),
            ..NetConfig::default()
        };
        let mut sim = Simulation::new(config, net, Simulation::generate_keys(4, 9)).unwrap();
        let requests: Vec<_> = (0..5u32).map(|i| sha256(&i.to_be_bytes())).collect();
        for (i, d) in requests.iter().enumerate() {
            sim.run_until(i as u64 * 5);
            sim.submit_request(*d);
        }
        let run = sim.run_until_quiescent(200_000);
        let honest = sim.honest_indices().len();
        let all_in = requests
            .iter()
            .all(|d| sim.honest_commit_count(d) == honest);
        println!(
            "{name:>21}: {} messages, {} view changes, finished at {} ms, all honest committed: {all_in}, agreement: {}",
            run.message_count,
            sim.view_changes(),
            run.final_time,
            if sim.check_agreement().is_ok() { "ok" } else { "VIOLATED" },
        );
    }
}
