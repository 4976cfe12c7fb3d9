use std::collections::BTreeMap;
use std::io::{self, BufRead, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{ClusterId, DetectorHistory, DetectorId, NodeId, ProcessId, SimTime};

#[derive(Debug, Error)]
pub enum TraceError {
    #[error("i/o: {0}")]
    Io(#[from] io::Error),
    #[error("line {line}: {source}")]
    Parse { line: usize, source: serde_json::Error },
    #[error("trace has no scenario header")]
    MissingHeader,
}

/// What a trace record describes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TraceKind {
    /// Run parameters; `detail` holds `key=value` pairs.
    Scenario,
    /// Per-cluster metrics threshold in `value`.
    Threshold,
    HeartbeatSend,
    Send,
    Broadcast,
    Deliver,
    Drop,
    Crash,
    TransientStart,
    TransientEnd,
    LinkDown,
    LinkUp,
    PartitionStart,
    PartitionEnd,
    QueryIssue,
    QueryResult,
    CrossUp,
    CrossDown,
    Freeze,
    Unfreeze,
    HeartbeatRejected,
    Isolated,
    GossipIgnored,
    PeerJoined,
    PeerEvicted,
    LateResponse,
    /// Effective suspicion in `value`, local suspicion in `local`.
    Sample,
}

/// One line of the trace.
///
/// For message records `actor` is the sender and `subject` the receiver; for
/// detector records `actor` is the detector and `subject` the process.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub seq: u64,
    pub time: SimTime,
    pub kind: TraceKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub actor: Option<NodeId>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub subject: Option<NodeId>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub value: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub local: Option<f64>,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub detail: String,
}

impl TraceRecord {
    /// Value of `key` in a `k=v;k=v` detail string.
    pub fn detail_field(&self, key: &str) -> Option<&str> {
        self.detail.split(';').filter_map(|kv| kv.split_once('=')).find(|(k, _)| *k == key).map(|(_, v)| v)
    }

    pub fn actor_detector(&self) -> Option<&DetectorId> {
        match &self.actor {
            Some(NodeId::Detector(d)) => Some(d),
            _ => None,
        }
    }

    pub fn actor_process(&self) -> Option<&ProcessId> {
        match &self.actor {
            Some(NodeId::Process(p)) => Some(p),
            _ => None,
        }
    }

    pub fn subject_process(&self) -> Option<&ProcessId> {
        match &self.subject {
            Some(NodeId::Process(p)) => Some(p),
            _ => None,
        }
    }
}

/// Run parameters recovered from a trace header.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceInfo {
    pub name: String,
    pub horizon: SimTime,
    pub cadence: SimTime,
    pub seed: u64,
    pub gossip: bool,
    pub thresholds: BTreeMap<ClusterId, f64>,
}

impl TraceInfo {
    pub fn threshold(&self, cluster: &ClusterId) -> Option<f64> {
        self.thresholds.get(cluster).copied()
    }
}

/// Ordered record of everything that happened in one run.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Trace {
    records: Vec<TraceRecord>,
}

impl Trace {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn records(&self) -> &[TraceRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn of_kind(&self, kind: TraceKind) -> impl Iterator<Item = &TraceRecord> {
        self.records.iter().filter(move |r| r.kind == kind)
    }

    /// Appends a record, assigning the next sequence number.
    pub fn push(
        &mut self,
        time: SimTime,
        kind: TraceKind,
        actor: Option<NodeId>,
        subject: Option<NodeId>,
        value: Option<f64>,
        detail: String,
    ) -> &mut TraceRecord {
        let seq = self.records.len() as u64;
        self.records.push(TraceRecord { seq, time, kind, actor, subject, value, local: None, detail });
        self.records.last_mut().expect("just pushed")
    }

    pub fn write_jsonl<W: Write>(&self, mut out: W) -> io::Result<()> {
        for r in &self.records {
            serde_json::to_writer(&mut out, r)?;
            out.write_all(b"\n")?;
        }
        out.flush()
    }

    pub fn to_jsonl(&self) -> String {
        let mut buf = Vec::new();
        self.write_jsonl(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("json is utf-8")
    }

    pub fn read_jsonl<R: BufRead>(input: R) -> Result<Trace, TraceError> {
        let mut records = Vec::new();
        for (i, line) in input.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let r = serde_json::from_str(&line).map_err(|source| TraceError::Parse { line: i + 1, source })?;
            records.push(r);
        }
        Ok(Trace { records })
    }

    pub fn info(&self) -> Result<TraceInfo, TraceError> {
        let header = self.of_kind(TraceKind::Scenario).next().ok_or(TraceError::MissingHeader)?;
        let num = |k: &str| header.detail_field(k).and_then(|v| v.parse::<f64>().ok());
        let thresholds = self
            .of_kind(TraceKind::Threshold)
            .filter_map(|r| Some((ClusterId::new(r.detail_field("cluster")?), r.value?)))
            .collect();
        Ok(TraceInfo {
            name: header.detail_field("name").unwrap_or_default().to_string(),
            horizon: SimTime::new(num("horizon").ok_or(TraceError::MissingHeader)?)
                .map_err(|_| TraceError::MissingHeader)?,
            cadence: SimTime::new(num("cadence").ok_or(TraceError::MissingHeader)?)
                .map_err(|_| TraceError::MissingHeader)?,
            seed: header.detail_field("seed").and_then(|v| v.parse().ok()).unwrap_or_default(),
            gossip: header.detail_field("gossip") == Some("true"),
            thresholds,
        })
    }

    /// Sampled effective suspicion of every (detector, process) pair.
    pub fn history(&self) -> DetectorHistory {
        self.sampled(|r| r.value)
    }

    /// Sampled local suspicion of every (detector, process) pair.
    pub fn local_history(&self) -> DetectorHistory {
        self.sampled(|r| r.local)
    }

    fn sampled(&self, pick: impl Fn(&TraceRecord) -> Option<f64>) -> DetectorHistory {
        let mut h = DetectorHistory::new();
        for r in self.of_kind(TraceKind::Sample) {
            if let (Some(d), Some(p), Some(v)) = (r.actor_detector(), r.subject_process(), pick(r)) {
                h.record(d, p, r.time, v).expect("samples are ordered and non-negative");
            }
        }
        h
    }
}
