use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use roadsim_harness::metrics::write_report;
use roadsim_harness::oracle::{self, OracleError};
use roadsim_harness::scenario::{ScenarioConfig, ScenarioError};
use roadsim_harness::sweep::{run_sweep, SweepError, SweepGrid};

/// Deterministic simulator of a roadside infrastructure chain: coded
/// multi-hop transport, passive vehicle broadcast, and two-tier task
/// management.
#[derive(Parser)]
#[command(name = "roadsim", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Execute one scenario and write its metrics files.
    Run {
        #[arg(long)]
        scenario: PathBuf,
        /// Master seed; defaults to the scenario's seeds.master.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
        /// Also write the network event log.
        #[arg(long)]
        trace: bool,
    },
    /// Run a cartesian parameter grid over a scenario.
    Sweep {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long)]
        grid: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        trace: bool,
    },
    /// Cross-check a small instance against a reference computation.
    Oracle {
        #[arg(value_enum)]
        kind: OracleKind,
        #[arg(long)]
        instance: PathBuf,
    },
    /// Parse and validate a scenario file.
    Validate {
        #[arg(long)]
        scenario: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum OracleKind {
    Dispatch,
    Decode,
    Loss,
}

const EXIT_VALIDATION: u8 = 1;
const EXIT_RUNTIME: u8 = 2;

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {}", err.message);
            ExitCode::from(err.code)
        }
    }
}

struct CliError {
    code: u8,
    message: String,
}

impl CliError {
    fn validation(message: String) -> Self {
        Self { code: EXIT_VALIDATION, message }
    }

    fn runtime(message: String) -> Self {
        Self { code: EXIT_RUNTIME, message }
    }
}

impl From<ScenarioError> for CliError {
    fn from(e: ScenarioError) -> Self {
        match e {
            ScenarioError::Validation(_) | ScenarioError::Parse(_) => {
                CliError::validation(e.to_string())
            }
            ScenarioError::Io(_) => CliError::runtime(e.to_string()),
        }
    }
}

impl From<SweepError> for CliError {
    fn from(e: SweepError) -> Self {
        match e {
            SweepError::Parse(_) | SweepError::BadKey(_) => CliError::validation(e.to_string()),
            SweepError::Scenario(inner) => inner.into(),
            other => CliError::runtime(other.to_string()),
        }
    }
}

impl From<OracleError> for CliError {
    fn from(e: OracleError) -> Self {
        match e {
            OracleError::Guard(_) | OracleError::Parse(_) | OracleError::Invalid(_) => {
                CliError::validation(e.to_string())
            }
            OracleError::Io(_) => CliError::runtime(e.to_string()),
        }
    }
}

fn execute(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Run { scenario, seed, out, trace } => {
            let config = ScenarioConfig::load(&scenario)?;
            let seed = seed.unwrap_or(config.seeds.master);
            let report = roadsim_harness::run(&config, seed, trace)
                .map_err(|e| CliError::runtime(e.to_string()))?;
            write_report(&report, &out).map_err(|e| CliError::runtime(e.to_string()))?;
            println!("scenario: {}", report.scenario);
            println!("seed: {seed}");
            println!("config digest: {}", report.config_digest);
            if !report.node_failures.is_empty() {
                println!(
                    "failure rate: avg {:.4}, worst {:.4}",
                    report.avg_failure_rate, report.worst_failure_rate
                );
            }
            for row in &report.transfer_bench {
                println!(
                    "transfer {} rep {}: {:.2} Mbps ({:.1}% delivered)",
                    row.coding,
                    row.repeat,
                    row.goodput_mbps,
                    row.delivered_fraction * 100.0
                );
            }
            for row in &report.ecc_bench {
                println!(
                    "ecc @{} Mbps (erasure {:.2}): pdr {:.4} with, {:.4} without",
                    row.app_rate_mbps, row.erasure, row.pdr_with_ecc, row.pdr_without_ecc
                );
            }
            println!("metrics written to {}", out.display());
            Ok(())
        }
        Command::Sweep { scenario, grid, out, trace } => {
            let text = std::fs::read_to_string(&scenario)
                .map_err(|e| CliError::runtime(format!("cannot read scenario: {e}")))?;
            let grid = SweepGrid::load(&grid)?;
            let outcome = run_sweep(&text, &grid, &out, trace)?;
            println!("{} sweep points written to {}", outcome.points.len(), out.display());
            Ok(())
        }
        Command::Oracle { kind, instance } => {
            let output = match kind {
                OracleKind::Dispatch => oracle::dispatch_oracle(&instance)?,
                OracleKind::Decode => oracle::decode_oracle(&instance)?,
                OracleKind::Loss => oracle::loss_oracle(&instance)?,
            };
            print!("{output}");
            Ok(())
        }
        Command::Validate { scenario } => {
            let config = ScenarioConfig::load(&scenario)?;
            println!("{} is valid (digest {})", config.name, config.digest());
            Ok(())
        }
    }
}
