use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use clusterfd::cli::{self, CliError, RunOptions};
use clusterfd::report;

/// Simulate accrual failure detectors and score their quality of service.
#[derive(Parser)]
#[command(name = "fdsim", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check a scenario file (or bundled scenario name) and list every problem.
    Validate { scenario: String },
    /// Run a scenario and write trace.jsonl, report.{json,txt,csv} and summary.json.
    Run {
        scenario: String,
        #[arg(long)]
        seed: Option<u64>,
        /// Disable suspicion gossip and freezing.
        #[arg(long)]
        no_gossip: bool,
        /// Sampling interval for suspicion levels.
        #[arg(long)]
        cadence: Option<f64>,
        #[arg(long, short, default_value = "fdsim-out")]
        output: PathBuf,
    },
    /// Compare two report.json files metric by metric.
    Compare {
        a: PathBuf,
        b: PathBuf,
        /// Also write the comparison as JSON.
        #[arg(long, short)]
        output: Option<PathBuf>,
    },
    /// Look up a detector's suspicion of a process in a saved trace.
    Query { trace: PathBuf, detector: String, subject: String, time: f64 },
}

fn main() -> ExitCode {
    match execute(Cli::parse().command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn execute(command: Command) -> Result<(), CliError> {
    match command {
        Command::Validate { scenario } => {
            let s = cli::validate_command(&scenario)?;
            println!(
                "ok: {} ({} clusters, {} detectors, {} processes, horizon {})",
                s.name(),
                s.topology.clusters().len(),
                s.topology.detectors().count(),
                s.topology.processes().count(),
                s.horizon
            );
        }
        Command::Run { scenario, seed, no_gossip, cadence, output } => {
            let opts = RunOptions { seed, no_gossip, cadence };
            let (qos, _, files) = cli::run_command(&scenario, &opts, &output)?;
            print!("{}", report::render_text(&qos));
            println!("\nwrote {}", files.trace.parent().unwrap_or(&output).display());
        }
        Command::Compare { a, b, output } => {
            let c = cli::compare_command(&a, &b)?;
            print!("{}", report::render_comparison(&c));
            if let Some(path) = output {
                let json = serde_json::to_string_pretty(&c).expect("comparison serializes");
                std::fs::write(&path, json).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))?;
            }
        }
        Command::Query { trace, detector, subject, time } => {
            let a = cli::query_command(&trace, &detector, &subject, time)?;
            println!(
                "{} -> {} at {} (sample {}): {:.6} {} (threshold {})",
                a.detector,
                a.subject,
                a.requested,
                a.sample_time,
                a.value,
                a.verdict(),
                a.threshold
            );
        }
    }
    Ok(())
}
