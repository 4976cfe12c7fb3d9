//! The commands behind the `fdsim` binary.

use std::fs;
use std::path::Path;

use thiserror::Error;

use crate::metrics::QosReport;
use crate::report::{self, Comparison, QueryAnswer, ReportError, RunFiles};
use crate::scenario::{self, Diagnostics, Scenario};
use crate::simnet::{self, Trace};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Invalid(Diagnostics),
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    /// 1 for an invalid scenario, 2 for anything that fails at run time.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Invalid(_) => 1,
            CliError::Runtime(_) => 2,
        }
    }
}

impl From<ReportError> for CliError {
    fn from(e: ReportError) -> Self {
        CliError::Runtime(e.to_string())
    }
}

/// Overrides applied on top of a scenario file.
#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub seed: Option<u64>,
    pub no_gossip: bool,
    pub cadence: Option<f64>,
}

/// Reads a scenario from a file, or from the bundled set when no such file
/// exists.
pub fn load_scenario(source: &str, opts: &RunOptions) -> Result<Scenario, CliError> {
    let path = Path::new(source);
    let text = if path.exists() {
        fs::read_to_string(path).map_err(|e| CliError::Runtime(format!("{source}: {e}")))?
    } else if let Some((_, text)) = scenario::BUNDLED.iter().find(|(n, _)| *n == source) {
        text.to_string()
    } else {
        return Err(CliError::Runtime(format!("{source}: no such file or bundled scenario")));
    };
    let mut config = toml::from_str::<scenario::ScenarioConfig>(&text)
        .map_err(|e| CliError::Invalid(Diagnostics(vec![format!("syntax: {}", e.message().trim())])))?;
    if let Some(seed) = opts.seed {
        config.seed = seed;
    }
    if opts.no_gossip {
        config.gossip = false;
    }
    if let Some(c) = opts.cadence {
        config.cadence = c;
    }
    scenario::resolve(config).map_err(CliError::Invalid)
}

pub fn validate_command(source: &str) -> Result<Scenario, CliError> {
    load_scenario(source, &RunOptions::default())
}

/// Runs a scenario and writes the trace, report and summary to `output`.
pub fn run_command(source: &str, opts: &RunOptions, output: &Path) -> Result<(QosReport, Trace, RunFiles), CliError> {
    let scenario = load_scenario(source, opts)?;
    let trace = simnet::run(&scenario);
    let qos = QosReport::compute(&scenario, &trace);
    let files = report::write_run(output, &trace, &qos)?;
    Ok((qos, trace, files))
}

pub fn compare_command(a: &Path, b: &Path) -> Result<Comparison, CliError> {
    let a = report::read_report(a)?;
    let b = report::read_report(b)?;
    Ok(report::compare(&a, &b)?)
}

pub fn query_command(trace: &Path, detector: &str, subject: &str, time: f64) -> Result<QueryAnswer, CliError> {
    let trace = report::read_trace(trace)?;
    Ok(report::query(&trace, detector, subject, time)?)
}
