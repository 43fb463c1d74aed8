//! The end-to-end experiment at a reduced size, printing the headline
//! metrics. `txnguard run` is the full-size equivalent.

use txnguard::ads::ForestParams;
use txnguard::harness::{run_experiment, ExperimentConfig};

fn main() {
    let config = ExperimentConfig {
        n_txns: 1_000,
        ads: ForestParams {
            n_trees: 40,
            ..ForestParams::default()
        },
        n_users: 30,
        ..ExperimentConfig::default()
    };
    let a = run_experiment(&config).expect("experiment runs");
    let r = &a.report;
    println!("transactions        {}", r.n_txns);
    println!("fraud labelled      {}", r.n_fraud_labeled);
    println!("held-out accuracy   {:.4}", r.evaluation.accuracy);
    println!("held-out recall     {:.4}", r.evaluation.recall);
    println!("fraud blocked       {:.3}", r.blocked_fraud_fraction);
    println!("outcomes            {:?}", r.counts);
    println!(
        "chain length        {} (verified: {})",
        r.chain_length, r.ledger_verified
    );
    println!(
        "sim latency mean    {:.1} ms",
        r.mean_validation_latency_s * 1e3
    );
    println!(
        "throughput          {:.0} txn/s",
        r.wall_clock.throughput_tps
    );
}
