use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn txnguard(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_txnguard"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn small_config(dir: &Path) -> String {
    let path = dir.join("config.json");
    fs::write(
        &path,
        r#"{"n_txns": 30, "corpus_rows": 400, "ads": {"n_trees": 5}, "n_users": 5, "n_agents": 2}"#,
    )
    .unwrap();
    path.to_str().unwrap().to_string()
}

#[test]
fn run_verify_tamper_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let config = small_config(dir.path());
    let out = dir.path().join("run");
    let out_s = out.to_str().unwrap();
    let o = txnguard(&["run", "--config", &config, "--seed", "7", "--out", out_s]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let report: serde_json::Value =
        serde_json::from_slice(&fs::read(out.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["ledger_verified"], true);

    let ledger = out.join("ledger.jsonl");
    let ledger_s = ledger.to_str().unwrap();
    assert_eq!(code(&txnguard(&["verify", ledger_s])), 0);

    let o = txnguard(&["tamper", ledger_s, "--trials", "200", "--out", out_s]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let t: serde_json::Value =
        serde_json::from_slice(&fs::read(out.join("tamper.json")).unwrap()).unwrap();
    assert_eq!(t["detected"], 200);

    // Corrupt one byte of a transaction id: verification must fail with 1.
    let mut bytes = fs::read(&ledger).unwrap();
    let at = bytes.windows(9).position(|w| w == b"\"txn_id\":").unwrap() + 10;
    bytes[at] = if bytes[at] == b'0' { b'1' } else { b'0' };
    fs::write(&ledger, &bytes).unwrap();
    let o = txnguard(&["verify", ledger_s]);
    assert_eq!(code(&o), 1);
    assert!(!o.stderr.is_empty());
}

#[test]
fn dataset_and_keygen() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let o = txnguard(&["dataset", "--n", "50", "--fraud-rate", "0.2", "--out", out]);
    assert_eq!(code(&o), 0);
    let csv = fs::read_to_string(dir.path().join("dataset.csv")).unwrap();
    assert_eq!(csv.lines().count(), 51);

    let o = txnguard(&["keygen", "--replicas", "7", "--seed", "3", "--out", out]);
    assert_eq!(code(&o), 0);
    let keys: Vec<serde_json::Value> =
        serde_json::from_slice(&fs::read(dir.path().join("keys.json")).unwrap()).unwrap();
    assert_eq!(keys.iter().filter(|k| k["kind"] == "Replica").count(), 7);
}

#[test]
fn usage_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    assert_eq!(code(&txnguard(&[])), 2);
    assert_eq!(code(&txnguard(&["frobnicate"])), 2);
    assert_eq!(code(&txnguard(&["run", "--seed", "not-a-number"])), 2);
    assert_eq!(
        code(&txnguard(&[
            "run",
            "--config",
            "/no/such/file.json",
            "--out",
            out
        ])),
        2
    );

    let bad = dir.path().join("bad.json");
    fs::write(&bad, r#"{"n_txns": 10, "typo_key": 1}"#).unwrap();
    let o = txnguard(&["run", "--config", bad.to_str().unwrap(), "--out", out]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("typo_key"));

    fs::write(&bad, r#"{"fraud_rate": 1.5}"#).unwrap();
    assert_eq!(
        code(&txnguard(&[
            "dataset",
            "--config",
            bad.to_str().unwrap(),
            "--out",
            out
        ])),
        2
    );
    assert_eq!(
        code(&txnguard(&["dataset", "--fraud-rate", "-1", "--out", out])),
        2
    );
    assert_eq!(
        code(&txnguard(&["keygen", "--replicas", "0", "--out", out])),
        2
    );
}

#[test]
fn verify_reports_structural_damage() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    assert_eq!(code(&txnguard(&["keygen", "--out", out])), 0);
    let ledger = dir.path().join("ledger.jsonl");
    fs::write(&ledger, b"").unwrap();
    let o = txnguard(&["verify", ledger.to_str().unwrap()]);
    assert_eq!(code(&o), 1);
    assert!(String::from_utf8_lossy(&o.stderr).contains("genesis"));
    let o = txnguard(&[
        "tamper",
        ledger.to_str().unwrap(),
        "--trials",
        "0",
        "--out",
        out,
    ]);
    assert_eq!(code(&o), 2);
}
