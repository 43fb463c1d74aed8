use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use txnguard::harness::{self, ExperimentConfig, HarnessError};

#[derive(Parser)]
#[command(
    name = "txnguard",
    version,
    about = "Secure agent transaction experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment config (JSON). Defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Master seed; replaces every seed in the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Run the end-to-end experiment and write its artifacts.
    Run {
        #[command(flatten)]
        common: Common,
    },
    /// Count how many random single-byte mutations of a ledger are detected.
    Tamper {
        ledger: PathBuf,
        /// Defaults to registry.json next to the ledger.
        #[arg(long)]
        registry: Option<PathBuf>,
        #[arg(long, default_value_t = 10_000)]
        trials: u64,
        #[command(flatten)]
        common: Common,
    },
    /// Verify a ledger; exits 1 on the first violation.
    Verify {
        ledger: PathBuf,
        /// Defaults to registry.json next to the ledger.
        #[arg(long)]
        registry: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Write a labeled CSV dataset.
    Dataset {
        /// Rows; defaults to the config's n_txns.
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        fraud_rate: Option<f64>,
        #[command(flatten)]
        common: Common,
    },
    /// Write key pairs, the principal registry and the enrollment store.
    Keygen {
        /// Replica count; defaults to 3f + 1.
        #[arg(long)]
        replicas: Option<usize>,
        #[command(flatten)]
        common: Common,
    },
}

fn config(c: &Common) -> Result<ExperimentConfig, HarnessError> {
    ExperimentConfig::resolve(c.config.as_deref(), c.seed)
}

fn registry_path(ledger: &Path, registry: Option<PathBuf>) -> PathBuf {
    registry.unwrap_or_else(|| {
        ledger
            .parent()
            .unwrap_or_else(|| Path::new("."))
            .join("registry.json")
    })
}

/// Write a line to stdout. A closed pipe (`txnguard run | head`) is not an error.
fn say(line: std::fmt::Arguments) {
    let _ = writeln!(std::io::stdout(), "{line}");
}

fn print<T: Serialize>(v: &T) {
    say(format_args!(
        "{}",
        serde_json::to_string_pretty(v).expect("serializable output")
    ));
}

fn execute(cmd: Command) -> Result<u8, HarnessError> {
    match cmd {
        Command::Run { common } => {
            let report = harness::cmd_run(&config(&common)?, &common.out)?;
            print(&report);
            Ok(0)
        }
        Command::Tamper {
            ledger,
            registry,
            trials,
            common,
        } => {
            let seed = common.seed.unwrap_or(config(&common)?.seeds.workload);
            let reg = registry_path(&ledger, registry);
            let report = harness::cmd_tamper(&ledger, &reg, trials, seed)?;
            std::fs::create_dir_all(&common.out)?;
            let path = common.out.join("tamper.json");
            std::fs::write(&path, serde_json::to_string_pretty(&report)? + "\n")?;
            print(&report);
            Ok(if report.detected == report.trials {
                0
            } else {
                1
            })
        }
        Command::Verify {
            ledger, registry, ..
        } => {
            let reg = registry_path(&ledger, registry);
            match harness::cmd_verify(&ledger, &reg)? {
                Ok(r) => {
                    print(&r);
                    Ok(0)
                }
                Err(v) => {
                    eprintln!("{v}");
                    Ok(1)
                }
            }
        }
        Command::Dataset {
            n,
            fraud_rate,
            common,
        } => {
            let mut c = config(&common)?;
            c.n_txns = n.unwrap_or(c.n_txns);
            c.fraud_rate = fraud_rate.unwrap_or(c.fraud_rate);
            c.validate()?;
            let (rows, fraud) = harness::cmd_dataset(&c, &common.out)?;
            say(format_args!(
                "wrote {rows} rows ({fraud} fraud) to {}",
                common.out.join("dataset.csv").display()
            ));
            Ok(0)
        }
        Command::Keygen { replicas, common } => {
            let recs = harness::cmd_keygen(&config(&common)?, replicas, &common.out)?;
            say(format_args!(
                "wrote {} key pairs to {}",
                recs.len(),
                common.out.display()
            ));
            Ok(0)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli.command) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
