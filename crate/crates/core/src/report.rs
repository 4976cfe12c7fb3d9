//! Run outputs, report comparison and post-hoc queries on saved traces.

use std::fmt::Write as _;
use std::fs;
use std::io::{self, BufWriter};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::metrics::{QosReport, Stat};
use crate::model::{DetectorId, NodeId, ProcessId};
use crate::simnet::{Trace, TraceError, TraceKind};

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error(transparent)]
    Trace(#[from] TraceError),
    #[error("{path}: {source}")]
    Json { path: PathBuf, source: serde_json::Error },
    #[error("reports describe different scenario shapes: {0}")]
    ShapeMismatch(String),
    #[error("time {time} is outside the traced horizon [0, {horizon})")]
    OutsideHorizon { time: f64, horizon: f64 },
    #[error("unknown detector `{0}`")]
    UnknownDetector(String),
    #[error("`{detector}` does not monitor `{subject}`")]
    UnknownSubject { detector: String, subject: String },
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> ReportError + '_ {
    move |source| ReportError::Io { path: path.to_path_buf(), source }
}

/// Machine-readable outcome of one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub scenario: String,
    pub seed: u64,
    pub gossip: bool,
    pub records: usize,
    pub completeness: bool,
    pub accuracy: bool,
    pub stabilized_at: Option<f64>,
    pub mean_detection_time: Option<f64>,
    pub mean_mistake_duration: Option<f64>,
    pub mistakes: usize,
    pub inter_cluster_messages: usize,
}

impl Summary {
    pub fn new(report: &QosReport, trace: &Trace) -> Summary {
        Summary {
            scenario: report.scenario.clone(),
            seed: report.seed,
            gossip: report.gossip,
            records: trace.len(),
            completeness: report.completeness.holds,
            accuracy: report.accuracy.holds,
            stabilized_at: report.accuracy.stabilized_at,
            mean_detection_time: report.detection_time.mean,
            mean_mistake_duration: report.mistake_duration.mean,
            mistakes: report.pairs.iter().map(|p| p.mistakes).sum(),
            inter_cluster_messages: report.traffic.inter_cluster,
        }
    }
}

/// Files written by [`write_run`].
#[derive(Debug, Clone)]
pub struct RunFiles {
    pub trace: PathBuf,
    pub report_json: PathBuf,
    pub report_text: PathBuf,
    pub report_csv: PathBuf,
    pub summary: PathBuf,
}

/// Writes the trace, the report in three formats and the summary into `dir`.
pub fn write_run(dir: &Path, trace: &Trace, report: &QosReport) -> Result<RunFiles, ReportError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let files = RunFiles {
        trace: dir.join("trace.jsonl"),
        report_json: dir.join("report.json"),
        report_text: dir.join("report.txt"),
        report_csv: dir.join("report.csv"),
        summary: dir.join("summary.json"),
    };
    let f = fs::File::create(&files.trace).map_err(io_err(&files.trace))?;
    trace.write_jsonl(BufWriter::new(f)).map_err(io_err(&files.trace))?;
    let json = serde_json::to_string_pretty(report).expect("report serializes");
    fs::write(&files.report_json, json + "\n").map_err(io_err(&files.report_json))?;
    fs::write(&files.report_text, render_text(report)).map_err(io_err(&files.report_text))?;
    fs::write(&files.report_csv, render_csv(report)).map_err(io_err(&files.report_csv))?;
    let summary = serde_json::to_string_pretty(&Summary::new(report, trace)).expect("summary serializes");
    fs::write(&files.summary, summary + "\n").map_err(io_err(&files.summary))?;
    Ok(files)
}

pub fn read_report(path: &Path) -> Result<QosReport, ReportError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    serde_json::from_str(&text).map_err(|source| ReportError::Json { path: path.to_path_buf(), source })
}

pub fn read_trace(path: &Path) -> Result<Trace, ReportError> {
    let f = fs::File::open(path).map_err(io_err(path))?;
    Ok(Trace::read_jsonl(io::BufReader::new(f))?)
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |x| format!("{x:.4}"))
}

fn stat_line(out: &mut String, name: &str, s: &Stat) {
    let _ = writeln!(
        out,
        "  {name:<22} n={:<5} mean={:<10} min={:<10} max={}",
        s.count,
        opt(s.mean),
        opt(s.min),
        opt(s.max)
    );
}

pub fn render_text(r: &QosReport) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "scenario {} (seed {}, gossip {})", r.scenario, r.seed, if r.gossip { "on" } else { "off" });
    let _ = writeln!(out, "horizon {} sampled every {}", r.horizon, r.cadence);
    let _ = writeln!(out, "\nQoS");
    stat_line(&mut out, "detection time", &r.detection_time);
    stat_line(&mut out, "mistake recurrence", &r.mistake_recurrence);
    stat_line(&mut out, "mistake duration", &r.mistake_duration);
    stat_line(&mut out, "mistake rate", &r.mistake_rate);
    stat_line(&mut out, "query accuracy", &r.query_accuracy);
    stat_line(&mut out, "good period", &r.good_period);
    let _ = writeln!(out, "\neventually perfect (within horizon)");
    let _ = writeln!(
        out,
        "  strong completeness     {}",
        if r.completeness.holds {
            "holds".to_string()
        } else {
            format!("violated: {}", r.completeness.undetected.join(", "))
        }
    );
    let _ = writeln!(
        out,
        "  eventual accuracy       {}",
        match r.accuracy.stabilized_at {
            Some(t) => format!("holds, stable from t={t}"),
            None => "violated within horizon".to_string(),
        }
    );
    let _ = writeln!(out, "\ntraffic");
    let t = &r.traffic;
    let _ = writeln!(out, "  sent {} delivered {} dropped {}", t.sent, t.delivered, t.dropped);
    let _ = writeln!(
        out,
        "  gossip transmissions {} ({:.4} per detector per time unit), inter-cluster {}",
        t.gossip_transmissions, t.gossip_rate_per_detector, t.inter_cluster
    );
    let faulty: Vec<_> = r.pairs.iter().filter(|p| p.faulty).collect();
    if !faulty.is_empty() {
        let _ = writeln!(out, "\ndetection time per detector");
        for p in faulty {
            let td = p.detection_time.and_then(|d| d.value()).map_or("undetected".to_string(), |v| format!("{v:.4}"));
            let _ = writeln!(out, "  {} -> {}: {td}", p.detector, p.process);
        }
    }
    out
}

pub fn render_csv(r: &QosReport) -> String {
    let mut out = String::from(
        "detector,process,faulty,detection_time,mistakes,mistake_time,good_time,suspected_while_faulty,query_accuracy\n",
    );
    for p in &r.pairs {
        let td = p.detection_time.and_then(|d| d.value()).map(|v| v.to_string()).unwrap_or_default();
        let _ = writeln!(
            out,
            "{},{},{},{td},{},{},{},{},{}",
            p.detector,
            p.process,
            p.faulty,
            p.mistakes,
            p.mistake_time,
            p.good_time,
            p.suspected_while_faulty,
            p.query_accuracy
        );
    }
    out
}

/// One metric of two reports side by side.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub metric: String,
    pub a: Option<f64>,
    pub b: Option<f64>,
    pub delta: Option<f64>,
    /// `"a"` or `"b"` when one side is strictly better.
    pub better: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub a: String,
    pub b: String,
    pub rows: Vec<ComparisonRow>,
}

/// Side-by-side deltas (`b - a`) of the headline metrics.
pub fn compare(a: &QosReport, b: &QosReport) -> Result<Comparison, ReportError> {
    if a.shape != b.shape || a.horizon != b.horizon {
        return Err(ReportError::ShapeMismatch(format!(
            "{} pairs/{} detectors/{} faulty over {} vs {} pairs/{} detectors/{} faulty over {}",
            a.shape.pairs,
            a.shape.detectors,
            a.shape.faulty,
            a.horizon,
            b.shape.pairs,
            b.shape.detectors,
            b.shape.faulty,
            b.horizon
        )));
    }
    let row = |metric: &str, x: Option<f64>, y: Option<f64>, lower_is_better: bool| {
        let delta = x.zip(y).map(|(x, y)| y - x);
        let better =
            delta.filter(|d| *d != 0.0).map(|d| if (d < 0.0) == lower_is_better { "b" } else { "a" }.to_string());
        ComparisonRow { metric: metric.to_string(), a: x, b: y, delta, better }
    };
    let label =
        |r: &QosReport| format!("{} seed {} gossip {}", r.scenario, r.seed, if r.gossip { "on" } else { "off" });
    Ok(Comparison {
        a: label(a),
        b: label(b),
        rows: vec![
            row("T_D mean", a.detection_time.mean, b.detection_time.mean, true),
            row("T_M mean", a.mistake_duration.mean, b.mistake_duration.mean, true),
            row("T_MR mean", a.mistake_recurrence.mean, b.mistake_recurrence.mean, false),
            row("lambda_M mean", a.mistake_rate.mean, b.mistake_rate.mean, true),
            row("P_A mean", a.query_accuracy.mean, b.query_accuracy.mean, false),
            row("T_G mean", a.good_period.mean, b.good_period.mean, false),
        ],
    })
}

pub fn render_comparison(c: &Comparison) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "a: {}\nb: {}\n", c.a, c.b);
    let _ = writeln!(out, "{:<15} {:>12} {:>12} {:>12}  better", "metric", "a", "b", "b - a");
    for r in &c.rows {
        let _ = writeln!(
            out,
            "{:<15} {:>12} {:>12} {:>12}  {}",
            r.metric,
            opt(r.a),
            opt(r.b),
            opt(r.delta),
            r.better.as_deref().unwrap_or("")
        );
    }
    out
}

/// Answer to a post-hoc query on a trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryAnswer {
    pub detector: DetectorId,
    pub subject: ProcessId,
    pub requested: f64,
    pub sample_time: f64,
    pub value: f64,
    pub threshold: f64,
    pub suspected: bool,
}

impl QueryAnswer {
    pub fn verdict(&self) -> &'static str {
        if self.suspected {
            "suspected"
        } else {
            "trusted"
        }
    }
}

/// Effective suspicion of `subject` at `detector` from the sample nearest to
/// `time` (the earlier one on a tie), with the verdict at the trace's report
/// threshold.
pub fn query(trace: &Trace, detector: &str, subject: &str, time: f64) -> Result<QueryAnswer, ReportError> {
    let info = trace.info()?;
    if !(0.0..info.horizon.as_f64()).contains(&time) {
        return Err(ReportError::OutsideHorizon { time, horizon: info.horizon.as_f64() });
    }
    let d: DetectorId = detector.parse().map_err(|_| ReportError::UnknownDetector(detector.to_string()))?;
    let p: ProcessId = subject
        .parse()
        .map_err(|_| ReportError::UnknownSubject { detector: detector.to_string(), subject: subject.to_string() })?;
    let dnode = NodeId::from(d.clone());
    let pnode = NodeId::from(p.clone());
    let mut seen_detector = false;
    let mut best: Option<(f64, f64)> = None;
    for r in trace.of_kind(TraceKind::Sample) {
        if r.actor.as_ref() != Some(&dnode) {
            continue;
        }
        seen_detector = true;
        if r.subject.as_ref() != Some(&pnode) {
            continue;
        }
        let t = r.time.as_f64();
        if best.is_none_or(|(bt, _)| (t - time).abs() < (bt - time).abs()) {
            best = Some((t, r.value.unwrap_or(0.0)));
        }
    }
    if !seen_detector {
        return Err(ReportError::UnknownDetector(detector.to_string()));
    }
    let (sample_time, value) = best
        .ok_or_else(|| ReportError::UnknownSubject { detector: detector.to_string(), subject: subject.to_string() })?;
    let threshold = info.threshold(&p.cluster).unwrap_or(1.0);
    Ok(QueryAnswer {
        detector: d,
        subject: p,
        requested: time,
        sample_time,
        value,
        threshold,
        suspected: value >= threshold,
    })
}
