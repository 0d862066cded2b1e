//! Command-line front end: run a scenario (simulated or live), print the
//! latest balance report from an output directory, or just validate a
//! scenario file.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use rollflow_sim::{load_scenario, run_live, run_scenario};

#[derive(Parser)]
#[command(name = "rollflow", about = "Rollout/training harness simulator", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Copy, Clone, PartialEq, Eq, ValueEnum)]
enum Mode {
    /// Deterministic discrete-event simulation.
    Sim,
    /// Threaded execution against a scaled wall clock.
    Live,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario and write metrics, reports, and a summary.
    Run {
        /// Path to a scenario TOML file.
        scenario: PathBuf,
        /// Override the scenario's seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory for metrics and reports.
        #[arg(long, default_value = "rollflow-out")]
        out: PathBuf,
        #[arg(long, value_enum, default_value = "sim")]
        mode: Mode,
    },
    /// Print the most recent balance report from an output directory.
    Report {
        /// Output directory of an earlier run.
        dir: PathBuf,
    },
    /// Parse and validate a scenario file.
    Validate {
        /// Path to a scenario TOML file.
        scenario: PathBuf,
    },
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(message) => {
            eprintln!("error: {message}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<(), String> {
    match cli.command {
        Command::Run { scenario, seed, out, mode } => {
            let mut scenario = load_scenario(&scenario).map_err(|e| e.to_string())?;
            if let Some(seed) = seed {
                scenario.seed = seed;
            }
            let summary = match mode {
                Mode::Sim => run_scenario(&scenario, Some(&out)),
                Mode::Live => run_live(&scenario, Some(&out)),
            }
            .map_err(|e| e.to_string())?;
            print!("{summary}");
            if !summary.conservation_violations.is_empty() {
                return Err("conservation violations detected".into());
            }
            Ok(())
        }
        Command::Report { dir } => {
            let mut reports: Vec<PathBuf> = std::fs::read_dir(&dir)
                .map_err(|e| format!("cannot read {}: {e}", dir.display()))?
                .filter_map(|entry| entry.ok())
                .map(|entry| entry.path())
                .filter(|p| {
                    p.file_name()
                        .and_then(|n| n.to_str())
                        .map(|n| n.starts_with("balance_report_") && n.ends_with(".txt"))
                        .unwrap_or(false)
                })
                .collect();
            reports.sort();
            match reports.last() {
                None => Err(format!("no balance reports in {}", dir.display())),
                Some(path) => {
                    let text =
                        std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
                    print!("{text}");
                    Ok(())
                }
            }
        }
        Command::Validate { scenario } => {
            load_scenario(&scenario).map_err(|e| e.to_string())?;
            println!("ok");
            Ok(())
        }
    }
}
