//! Cluster topology, border detectors and on-request cross-cluster queries.
//!
//! Detectors only monitor processes of their own cluster. Suspicion about a
//! process elsewhere moves between clusters only when asked for: the origin
//! detector looks up a border detector of the target cluster in the name
//! registry and sends it a request; the border answers from its own table, or
//! relays once to a local detector that monitors the subject.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{ClusterId, DetectorId, NodeId, ProcessId, SimTime};
use crate::simnet::{Trace, TraceKind};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ClusterError {
    #[error("unresolvable cluster `{0}`")]
    UnresolvableCluster(ClusterId),
    #[error("{0} is listed in more than one cluster")]
    Duplicate(String),
    #[error("cluster `{0}` has no border detector")]
    NoBorder(ClusterId),
    #[error("border {border} is not a detector of cluster `{cluster}`")]
    ForeignBorder { cluster: ClusterId, border: DetectorId },
    #[error("{detector} cannot monitor {process}: different cluster")]
    ForeignMonitoring { detector: DetectorId, process: ProcessId },
}

/// Members of one cluster.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ClusterMembers {
    pub detectors: BTreeSet<DetectorId>,
    pub processes: BTreeSet<ProcessId>,
    pub borders: Vec<DetectorId>,
    /// Which processes each detector monitors.
    pub monitoring: BTreeMap<DetectorId, BTreeSet<ProcessId>>,
}

/// Static name registry mapping a cluster to its border detectors, resolved
/// round-robin.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct BorderRegistry {
    borders: BTreeMap<ClusterId, Vec<DetectorId>>,
    cursor: BTreeMap<ClusterId, usize>,
}

impl BorderRegistry {
    pub fn new(borders: BTreeMap<ClusterId, Vec<DetectorId>>) -> Self {
        BorderRegistry { borders, cursor: BTreeMap::new() }
    }

    pub fn borders(&self, cluster: &ClusterId) -> Option<&[DetectorId]> {
        self.borders.get(cluster).map(Vec::as_slice)
    }

    /// Next border detector of `cluster`, cycling through the registered list.
    pub fn resolve_border(&mut self, cluster: &ClusterId) -> Result<DetectorId, ClusterError> {
        let list = self
            .borders
            .get(cluster)
            .filter(|l| !l.is_empty())
            .ok_or_else(|| ClusterError::UnresolvableCluster(cluster.clone()))?;
        let cursor = self.cursor.entry(cluster.clone()).or_insert(0);
        let chosen = list[*cursor % list.len()].clone();
        *cursor = (*cursor + 1) % list.len();
        Ok(chosen)
    }
}

/// Every cluster with its detectors, processes and borders.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ClusterTopology {
    clusters: BTreeMap<ClusterId, ClusterMembers>,
}

impl ClusterTopology {
    pub fn new(clusters: BTreeMap<ClusterId, ClusterMembers>) -> Result<Self, ClusterError> {
        let mut seen_detectors = BTreeSet::new();
        let mut seen_processes = BTreeSet::new();
        for (name, members) in &clusters {
            if members.borders.is_empty() {
                return Err(ClusterError::NoBorder(name.clone()));
            }
            for b in &members.borders {
                if !members.detectors.contains(b) {
                    return Err(ClusterError::ForeignBorder { cluster: name.clone(), border: b.clone() });
                }
            }
            for d in &members.detectors {
                if &d.cluster != name || !seen_detectors.insert(d.clone()) {
                    return Err(ClusterError::Duplicate(d.to_string()));
                }
            }
            for p in &members.processes {
                if &p.cluster != name || !seen_processes.insert(p.clone()) {
                    return Err(ClusterError::Duplicate(p.to_string()));
                }
            }
            for (d, watched) in &members.monitoring {
                for p in watched {
                    if p.cluster != d.cluster || !members.processes.contains(p) {
                        return Err(ClusterError::ForeignMonitoring { detector: d.clone(), process: p.clone() });
                    }
                }
            }
        }
        Ok(ClusterTopology { clusters })
    }

    pub fn clusters(&self) -> &BTreeMap<ClusterId, ClusterMembers> {
        &self.clusters
    }

    pub fn cluster(&self, id: &ClusterId) -> Option<&ClusterMembers> {
        self.clusters.get(id)
    }

    pub fn registry(&self) -> BorderRegistry {
        BorderRegistry::new(self.clusters.iter().map(|(c, m)| (c.clone(), m.borders.clone())).collect())
    }

    pub fn detectors(&self) -> impl Iterator<Item = &DetectorId> {
        self.clusters.values().flat_map(|m| m.detectors.iter())
    }

    pub fn processes(&self) -> impl Iterator<Item = &ProcessId> {
        self.clusters.values().flat_map(|m| m.processes.iter())
    }

    pub fn monitored_by(&self, d: &DetectorId) -> BTreeSet<ProcessId> {
        self.clusters.get(&d.cluster).and_then(|m| m.monitoring.get(d)).cloned().unwrap_or_default()
    }

    /// Detectors that monitor `p`, in id order.
    pub fn monitors_of(&self, p: &ProcessId) -> Vec<DetectorId> {
        self.clusters
            .get(&p.cluster)
            .map(|m| m.monitoring.iter().filter(|(_, set)| set.contains(p)).map(|(d, _)| d.clone()).collect())
            .unwrap_or_default()
    }

    pub fn contains_node(&self, n: &NodeId) -> bool {
        match n {
            NodeId::Process(p) => self.clusters.get(&p.cluster).is_some_and(|m| m.processes.contains(p)),
            NodeId::Detector(d) => self.clusters.get(&d.cluster).is_some_and(|m| m.detectors.contains(d)),
        }
    }
}

/// Token identifying one cross-cluster query.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct RequestId(pub u64);

/// A suspicion query travelling towards the subject's cluster.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossClusterRequest {
    pub request_id: RequestId,
    pub origin_detector: DetectorId,
    pub subject: ProcessId,
    pub issued_at: SimTime,
    pub deadline: SimTime,
    /// Where the answer goes: the origin, or the border that relayed.
    pub reply_to: DetectorId,
    /// Set once a border has forwarded the request inside its cluster.
    pub relayed: bool,
}

/// How a query ended.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum QueryOutcome {
    Value { value: f64, answered_by: DetectorId, answered_at: SimTime },
    UnknownSubject,
    Timeout,
    UnresolvableCluster,
}

impl QueryOutcome {
    pub fn label(&self) -> &'static str {
        match self {
            QueryOutcome::Value { .. } => "value",
            QueryOutcome::UnknownSubject => "unknown_subject",
            QueryOutcome::Timeout => "timeout",
            QueryOutcome::UnresolvableCluster => "unresolvable_cluster",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryResponse {
    pub request_id: RequestId,
    pub subject: ProcessId,
    pub outcome: QueryOutcome,
}

/// Messages sent across cluster boundaries in a trace.
pub fn inter_cluster_traffic_count(trace: &Trace) -> usize {
    trace
        .records()
        .iter()
        .filter(|r| r.kind == TraceKind::Send)
        .filter(|r| match (&r.actor, &r.subject) {
            (Some(from), Some(to)) => from.cluster() != to.cluster(),
            _ => false,
        })
        .count()
}
