//! One ordinary and one suspicious transaction through the full pipeline:
//! authenticate, decide, screen, replicate, append. The suspicious one is
//! held until the user completes a step-up check.

use txnguard::ads::{generate_dataset, train_forest, ForestParams};
use txnguard::authn::{respond_to_challenge, AuthConfig, AuthInputs, Authenticator};
use txnguard::consensus::ConsensusConfig;
use txnguard::harness::generate_principals;
use txnguard::ledger::verify_chain;
use txnguard::model::{Amount, GeoPoint, Nonce, Transaction, TxnId};
use txnguard::netsim::{NetConfig, Simulation};
use txnguard::pipeline::{Pipeline, PipelineConfig, ScreeningContext, StepUp, TxnRequest};
use txnguard::policy::PolicyWeights;

const DAY_MS: u64 = 86_400_000;

fn main() {
    let data = generate_dataset(3_000, 0.1, 5).unwrap();
    let params = ForestParams {
        n_trees: 30,
        ..ForestParams::default()
    };
    let model = train_forest(&data, params, 5).unwrap();

    let consensus = ConsensusConfig::with_default_ids(1, 200);
    let principals = generate_principals(&consensus.replica_ids, 2, 1, 5);
    let (alice, shop) = (&principals.users[0], &principals.users[1]);
    let (agent_id, agent_key) = &principals.agents[0];
    let net = NetConfig {
        latency_ms: (1, 4),
        ..NetConfig::default()
    };
    let sim = Simulation::new(consensus, net, principals.replicas.clone()).unwrap();
    let auth = Authenticator::new(principals.enrollment(), AuthConfig::default(), 5);
    let registry = principals.registry();
    let mut pipe = Pipeline::new(
        PipelineConfig::default(),
        registry.clone(),
        auth,
        PolicyWeights::standard(),
        model,
        sim,
    );

    let home = GeoPoint::from_degrees(48.85, 2.35);
    let txn = |id: u128, units: f64, at: u64, loc: GeoPoint| Transaction {
        txn_id: TxnId::from_u128(id),
        sender_id: alice.id.clone(),
        receiver_id: shop.id.clone(),
        agent_id: agent_id.clone(),
        amount: Amount::from_units(units),
        timestamp: at,
        location: loc,
        nonce: Nonce([id as u8; 8]),
    };
    let afternoon = 40 * DAY_MS + 14 * 3_600_000;
    // Ten earlier purchases through the same agent, over a week ago.
    let history: Vec<Transaction> = (0..10)
        .map(|k| txn(100 + k, 30.0, afternoon - 8 * DAY_MS - k as u64, home))
        .collect();
    let requests = [
        ("ordinary", txn(1, 30.0, afternoon, home), 90.0),
        // About 2,000 km from home, at 2 a.m., in a rushed session.
        (
            "suspicious",
            txn(
                2,
                2_500.0,
                afternoon - 12 * 3_600_000,
                GeoPoint::from_degrees(48.85, 29.5),
            ),
            30.0,
        ),
    ];

    for (name, t, duration) in requests {
        let session = pipe.begin(&t);
        let otp = pipe
            .authenticator()
            .store()
            .otp(&alice.id)
            .unwrap()
            .current_code();
        let req = TxnRequest {
            inputs: AuthInputs {
                probe: alice.template.clone(),
                otp_code: otp,
                challenge_response: respond_to_challenge(&session.nonce, agent_key),
            },
            context: ScreeningContext {
                history: history.clone(),
                home,
                session_duration_s: duration,
            },
            txn: t,
        };
        let out = pipe.process_transaction(session, &req).unwrap();
        println!("{name}: {} score {:?}", out.state.name(), out.score);
        for e in &out.timeline {
            println!("    {:>4} ms  {:?}", e.at, e.stage);
        }
    }

    for alert in pipe.alerts() {
        println!(
            "alert: {} {:?} score {:.3}",
            alert.txn_id.to_hex(),
            alert.reason,
            alert.score
        );
    }
    let held: Vec<TxnId> = pipe.held().iter().map(|r| r.txn.txn_id).collect();
    for id in held {
        let nonce = pipe.held().get(&id).unwrap().nonce;
        let step_up = StepUp {
            otp_code: pipe
                .authenticator()
                .store()
                .otp(&alice.id)
                .unwrap()
                .current_code(),
            response: respond_to_challenge(&nonce, agent_key),
        };
        let out = pipe.resume_held(&id, &step_up).unwrap();
        println!(
            "after step-up: {} at height {:?}",
            out.state.name(),
            out.state.height()
        );
    }
    println!(
        "chain length {}, verifies: {}",
        pipe.chain().len(),
        verify_chain(pipe.chain(), &registry).is_ok()
    );
}
