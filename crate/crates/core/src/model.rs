//! Domain types shared by every layer: identities, simulated time, failure
//! patterns, detector histories and detector parameters.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::ops::Add;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

/// Errors raised while constructing or querying model values.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("invalid time value {0}: must be finite and non-negative")]
    InvalidTime(f64),
    #[error("cannot parse identifier `{0}` (expected `<cluster>/p<n>` or `<cluster>/d<n>`)")]
    BadId(String),
    #[error("process {0} is not part of the process set")]
    UnknownProcess(ProcessId),
    #[error("transient intervals for {0} are not disjoint and well ordered")]
    TransientOverlap(ProcessId),
    #[error("transient interval [{start}, {end}] for {process} is empty or reversed")]
    EmptyInterval { process: ProcessId, start: f64, end: f64 },
    #[error("history query times for ({detector}, {process}) must be strictly increasing")]
    NonMonotoneHistory { detector: DetectorId, process: ProcessId },
    #[error("negative suspicion value {0}")]
    NegativeSuspicion(f64),
}

/// A point (or span) on the simulated global clock, in abstract time units.
///
/// Always finite and non-negative, which makes the total order below sound.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct SimTime(f64);

impl SimTime {
    pub const ZERO: SimTime = SimTime(0.0);

    pub fn new(value: f64) -> Result<Self, ModelError> {
        if value.is_finite() && value >= 0.0 {
            Ok(SimTime(value))
        } else {
            Err(ModelError::InvalidTime(value))
        }
    }

    /// Builds a time from a literal known to be valid. Panics otherwise.
    pub fn from_f64(value: f64) -> Self {
        Self::new(value).expect("valid simulated time")
    }

    pub fn as_f64(self) -> f64 {
        self.0
    }

    /// Signed distance `self - earlier`.
    pub fn since(self, earlier: SimTime) -> f64 {
        self.0 - earlier.0
    }

    pub fn max(self, other: SimTime) -> SimTime {
        if other > self {
            other
        } else {
            self
        }
    }

    pub fn min(self, other: SimTime) -> SimTime {
        if other < self {
            other
        } else {
            self
        }
    }
}

impl Eq for SimTime {}

impl PartialOrd for SimTime {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for SimTime {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.0.total_cmp(&other.0)
    }
}

impl Add for SimTime {
    type Output = SimTime;
    fn add(self, rhs: SimTime) -> SimTime {
        SimTime(self.0 + rhs.0)
    }
}

impl Add<f64> for SimTime {
    type Output = SimTime;
    /// Adds a non-negative span. Negative spans are clamped at zero time.
    fn add(self, rhs: f64) -> SimTime {
        SimTime((self.0 + rhs).max(0.0))
    }
}

impl fmt::Display for SimTime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(&self.0, f)
    }
}

impl Serialize for SimTime {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_f64(self.0)
    }
}

impl<'de> Deserialize<'de> for SimTime {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let v = f64::deserialize(d)?;
        SimTime::new(v).map_err(serde::de::Error::custom)
    }
}

/// Name of a cluster of failure detection services.
#[derive(Debug, Clone, Eq)]
pub struct ClusterId(Arc<str>);

// equality compares names, so hashing must too
impl std::hash::Hash for ClusterId {
    fn hash<H: std::hash::Hasher>(&self, state: &mut H) {
        self.0.hash(state);
    }
}

impl PartialEq for ClusterId {
    fn eq(&self, other: &Self) -> bool {
        Arc::ptr_eq(&self.0, &other.0) || self.0 == other.0
    }
}

impl PartialOrd for ClusterId {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for ClusterId {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        if Arc::ptr_eq(&self.0, &other.0) {
            std::cmp::Ordering::Equal
        } else {
            self.0.cmp(&other.0)
        }
    }
}

impl ClusterId {
    pub fn new(name: &str) -> Self {
        ClusterId(Arc::from(name))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for ClusterId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// A monitored application process, `<cluster>/p<index>`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ProcessId {
    pub cluster: ClusterId,
    pub index: u32,
}

/// A failure detection service, `<cluster>/d<index>`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct DetectorId {
    pub cluster: ClusterId,
    pub index: u32,
}

impl ProcessId {
    pub fn new(cluster: &ClusterId, index: u32) -> Self {
        ProcessId { cluster: cluster.clone(), index }
    }
}

impl DetectorId {
    pub fn new(cluster: &ClusterId, index: u32) -> Self {
        DetectorId { cluster: cluster.clone(), index }
    }
}

/// Any addressable endpoint of the simulated network.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum NodeId {
    Process(ProcessId),
    Detector(DetectorId),
}

impl NodeId {
    pub fn cluster(&self) -> &ClusterId {
        match self {
            NodeId::Process(p) => &p.cluster,
            NodeId::Detector(d) => &d.cluster,
        }
    }
}

impl From<ProcessId> for NodeId {
    fn from(p: ProcessId) -> Self {
        NodeId::Process(p)
    }
}

impl From<DetectorId> for NodeId {
    fn from(d: DetectorId) -> Self {
        NodeId::Detector(d)
    }
}

impl fmt::Display for ProcessId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/p{}", self.cluster, self.index)
    }
}

impl fmt::Display for DetectorId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/d{}", self.cluster, self.index)
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            NodeId::Process(p) => p.fmt(f),
            NodeId::Detector(d) => d.fmt(f),
        }
    }
}

impl FromStr for NodeId {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || ModelError::BadId(s.to_string());
        let (cluster, local) = s.rsplit_once('/').ok_or_else(bad)?;
        if cluster.is_empty() || local.len() < 2 {
            return Err(bad());
        }
        let (tag, digits) = local.split_at(1);
        if !digits.bytes().all(|b| b.is_ascii_digit()) {
            return Err(bad());
        }
        let index: u32 = digits.parse().map_err(|_| bad())?;
        let cluster = ClusterId::new(cluster);
        match tag {
            "p" => Ok(NodeId::Process(ProcessId { cluster, index })),
            "d" => Ok(NodeId::Detector(DetectorId { cluster, index })),
            _ => Err(bad()),
        }
    }
}

impl FromStr for ProcessId {
    type Err = ModelError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.parse::<NodeId>()? {
            NodeId::Process(p) => Ok(p),
            NodeId::Detector(_) => Err(ModelError::BadId(s.to_string())),
        }
    }
}

impl FromStr for DetectorId {
    type Err = ModelError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.parse::<NodeId>()? {
            NodeId::Detector(d) => Ok(d),
            NodeId::Process(_) => Err(ModelError::BadId(s.to_string())),
        }
    }
}

macro_rules! string_serde {
    ($ty:ty) => {
        impl Serialize for $ty {
            fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
                s.collect_str(self)
            }
        }

        impl<'de> Deserialize<'de> for $ty {
            fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
                let raw = String::deserialize(d)?;
                raw.parse().map_err(serde::de::Error::custom)
            }
        }
    };
}

string_serde!(NodeId);
string_serde!(ProcessId);
string_serde!(DetectorId);

/// Ground truth of which processes crash and when, plus transient silences.
///
/// A process with a crash time is faulty for the whole run; transient
/// intervals model an overloaded host whose process is silent but alive.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct FailurePattern {
    processes: BTreeSet<ProcessId>,
    crash_times: BTreeMap<ProcessId, SimTime>,
    transient_intervals: BTreeMap<ProcessId, Vec<(SimTime, SimTime)>>,
}

impl FailurePattern {
    pub fn new(
        processes: impl IntoIterator<Item = ProcessId>,
        crash_times: BTreeMap<ProcessId, SimTime>,
        mut transient_intervals: BTreeMap<ProcessId, Vec<(SimTime, SimTime)>>,
    ) -> Result<Self, ModelError> {
        let processes: BTreeSet<ProcessId> = processes.into_iter().collect();
        for p in crash_times.keys().chain(transient_intervals.keys()) {
            if !processes.contains(p) {
                return Err(ModelError::UnknownProcess(p.clone()));
            }
        }
        for (p, intervals) in transient_intervals.iter_mut() {
            intervals.sort();
            for &(start, end) in intervals.iter() {
                if end <= start {
                    return Err(ModelError::EmptyInterval {
                        process: p.clone(),
                        start: start.as_f64(),
                        end: end.as_f64(),
                    });
                }
            }
            if intervals.windows(2).any(|w| w[1].0 < w[0].1) {
                return Err(ModelError::TransientOverlap(p.clone()));
            }
        }
        Ok(FailurePattern { processes, crash_times, transient_intervals })
    }

    /// A pattern with no failures at all.
    pub fn fault_free(processes: impl IntoIterator<Item = ProcessId>) -> Self {
        FailurePattern { processes: processes.into_iter().collect(), ..Default::default() }
    }

    pub fn processes(&self) -> &BTreeSet<ProcessId> {
        &self.processes
    }

    pub fn crash_time(&self, p: &ProcessId) -> Option<SimTime> {
        self.crash_times.get(p).copied()
    }

    pub fn transient_intervals(&self, p: &ProcessId) -> &[(SimTime, SimTime)] {
        self.transient_intervals.get(p).map(Vec::as_slice).unwrap_or(&[])
    }

    /// `correct(F)`: processes that never crash. Independent of `t`.
    pub fn correct_set(&self, _t: SimTime) -> BTreeSet<ProcessId> {
        self.processes.iter().filter(|p| !self.crash_times.contains_key(*p)).cloned().collect()
    }

    pub fn faulty_set(&self) -> BTreeSet<ProcessId> {
        self.crash_times.keys().cloned().collect()
    }

    pub fn is_faulty(&self, p: &ProcessId) -> bool {
        self.crash_times.contains_key(p)
    }

    /// `F(t)`: processes crashed at or before `t`.
    pub fn failed_at(&self, t: SimTime) -> BTreeSet<ProcessId> {
        self.crash_times.iter().filter(|(_, &c)| c <= t).map(|(p, _)| p.clone()).collect()
    }

    pub fn has_failed(&self, p: &ProcessId, t: SimTime) -> bool {
        self.crash_times.get(p).is_some_and(|&c| c <= t)
    }

    /// True if `p` emits nothing at `t`: crashed, or inside a transient interval.
    pub fn is_silent(&self, p: &ProcessId, t: SimTime) -> bool {
        self.has_failed(p, t) || self.transient_intervals(p).iter().any(|&(start, end)| start <= t && t < end)
    }
}

/// One answered query: `H(q, t)(p) = value`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HistorySample {
    pub time: SimTime,
    pub value: f64,
}

/// Accrual detector history: the suspicion value output by each detector for
/// each monitored process at each query time.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct DetectorHistory {
    series: BTreeMap<(DetectorId, ProcessId), Vec<HistorySample>>,
}

impl DetectorHistory {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn record(
        &mut self,
        detector: &DetectorId,
        process: &ProcessId,
        time: SimTime,
        value: f64,
    ) -> Result<(), ModelError> {
        if value.is_nan() || value < 0.0 {
            return Err(ModelError::NegativeSuspicion(value));
        }
        let series = self.series.entry((detector.clone(), process.clone())).or_default();
        if series.last().is_some_and(|last| last.time >= time) {
            return Err(ModelError::NonMonotoneHistory { detector: detector.clone(), process: process.clone() });
        }
        series.push(HistorySample { time, value });
        Ok(())
    }

    pub fn series(&self, detector: &DetectorId, process: &ProcessId) -> &[HistorySample] {
        self.series.get(&(detector.clone(), process.clone())).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn pairs(&self) -> impl Iterator<Item = &(DetectorId, ProcessId)> {
        self.series.keys()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&(DetectorId, ProcessId), &[HistorySample])> {
        self.series.iter().map(|(k, v)| (k, v.as_slice()))
    }

    pub fn len(&self) -> usize {
        self.series.values().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Inter-arrival predictor used to place the next expected heartbeat.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum PredictorKind {
    #[default]
    Sma,
    RestrictedMa,
    Wma,
    Ema,
}

/// Upper bound applied to each missed heartbeat's contribution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ContributionCap {
    /// Each missed heartbeat contributes at most 1.
    #[default]
    One,
    /// Raw logarithmic contribution, unbounded.
    None,
}

/// Tunables of one failure detector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectorParams {
    pub heartbeat_period: SimTime,
    pub window_size: usize,
    pub predictor: PredictorKind,
    pub ema_alpha: f64,
    /// Threshold value (TV) that triggers gossip.
    pub threshold: f64,
    pub gossip_fanout: usize,
    /// Membership broadcast period.
    pub gossip_period: SimTime,
    pub freeze_timeout: SimTime,
    pub remote_value_ttl: SimTime,
    /// How often a detector whose local suspicion is vetoed by peers re-asks them.
    pub probe_interval: SimTime,
    /// Views drop detectors not heard from for this long.
    pub membership_timeout: SimTime,
    pub query_deadline: SimTime,
    pub contribution_cap: ContributionCap,
}

impl DetectorParams {
    /// Defaults derived from a nominal heartbeat period.
    pub fn with_period(heartbeat_period: f64) -> Self {
        let hb = heartbeat_period;
        DetectorParams {
            heartbeat_period: SimTime::from_f64(hb),
            window_size: 5,
            predictor: PredictorKind::Sma,
            ema_alpha: 0.25,
            threshold: 1.0,
            gossip_fanout: 2,
            gossip_period: SimTime::from_f64(5.0 * hb),
            freeze_timeout: SimTime::from_f64(2.0 * hb),
            remote_value_ttl: SimTime::from_f64(4.0 * hb),
            probe_interval: SimTime::from_f64(hb),
            membership_timeout: SimTime::from_f64(15.0 * hb),
            query_deadline: SimTime::from_f64(10.0 * hb),
            contribution_cap: ContributionCap::One,
        }
    }

    /// Every violated constraint, as human readable messages.
    pub fn problems(&self) -> Vec<String> {
        let mut out = Vec::new();
        for (name, v) in [
            ("heartbeat_period", self.heartbeat_period),
            ("gossip_period", self.gossip_period),
            ("freeze_timeout", self.freeze_timeout),
            ("remote_value_ttl", self.remote_value_ttl),
            ("probe_interval", self.probe_interval),
            ("membership_timeout", self.membership_timeout),
            ("query_deadline", self.query_deadline),
        ] {
            if v.as_f64() <= 0.0 {
                out.push(format!("{name} must be > 0 (got {v})"));
            }
        }
        if self.window_size < 2 {
            out.push(format!("window_size must be >= 2 (got {})", self.window_size));
        }
        if !(self.ema_alpha > 0.0 && self.ema_alpha < 1.0) {
            out.push(format!("ema_alpha must lie in (0, 1) (got {})", self.ema_alpha));
        }
        if !(self.threshold > 0.0 && self.threshold.is_finite()) {
            out.push(format!("threshold must be a positive number (got {})", self.threshold));
        }
        if self.gossip_fanout < 1 {
            out.push("gossip_fanout must be >= 1".to_string());
        }
        out
    }
}

impl Default for DetectorParams {
    fn default() -> Self {
        Self::with_period(1.0)
    }
}
