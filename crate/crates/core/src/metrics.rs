//! Quality-of-service metrics and eventually-perfect property checks.
//!
//! Everything here is derived from the sampled suspicion levels in a trace,
//! thresholded into a binary suspected/trusted view. Sample `k` stands for
//! the interval `[t_k, t_{k+1})`; the last sample runs to the horizon.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{DetectorHistory, DetectorId, FailurePattern, HistorySample, ProcessId, SimTime};
use crate::simnet::{Trace, TraceError, TraceKind};

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("not applicable: {0} is {1}")]
    NotApplicable(ProcessId, &'static str),
    #[error(transparent)]
    Trace(#[from] TraceError),
    #[error("no threshold for cluster of {0}")]
    NoThreshold(ProcessId),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Transition {
    /// Trusted to suspected.
    Suspect,
    /// Suspected to trusted.
    Trust,
}

/// Threshold crossings of every (detector, process) pair, starting from the
/// trusted state.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TransitionLog {
    log: BTreeMap<(DetectorId, ProcessId), Vec<(SimTime, Transition)>>,
}

impl TransitionLog {
    pub fn from_history(history: &DetectorHistory, threshold: impl Fn(&ProcessId) -> f64) -> Self {
        let log = history
            .iter()
            .map(|((d, p), samples)| ((d.clone(), p.clone()), transitions(samples, threshold(p))))
            .collect();
        TransitionLog { log }
    }

    pub fn get(&self, detector: &DetectorId, process: &ProcessId) -> &[(SimTime, Transition)] {
        self.log.get(&(detector.clone(), process.clone())).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn iter(&self) -> impl Iterator<Item = (&(DetectorId, ProcessId), &Vec<(SimTime, Transition)>)> {
        self.log.iter()
    }
}

/// Transitions of one sampled series.
pub fn transitions(samples: &[HistorySample], threshold: f64) -> Vec<(SimTime, Transition)> {
    let mut out = Vec::new();
    let mut suspected = false;
    for s in samples {
        let now = s.value >= threshold;
        if now != suspected {
            out.push((s.time, if now { Transition::Suspect } else { Transition::Trust }));
            suspected = now;
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DetectionTime {
    Detected(f64),
    Undetected,
}

impl DetectionTime {
    pub fn value(self) -> Option<f64> {
        match self {
            DetectionTime::Detected(v) => Some(v),
            DetectionTime::Undetected => None,
        }
    }
}

/// Time from the crash until the detector starts suspecting for good: the
/// last trusted-to-suspected transition with nothing after it. A process
/// already suspected when it crashes is detected at time 0.
pub fn detection_time_of(samples: &[HistorySample], threshold: f64, crash: SimTime) -> DetectionTime {
    match transitions(samples, threshold).last() {
        Some(&(at, Transition::Suspect)) => DetectionTime::Detected(at.since(crash).max(0.0)),
        _ => DetectionTime::Undetected,
    }
}

/// How the horizon of one pair splits up.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct IntervalBreakdown {
    /// Suspected while the process had not crashed: `(start, length)`.
    pub mistakes: Vec<(f64, f64)>,
    /// Maximal trusted intervals: `(start, length)`.
    pub good: Vec<(f64, f64)>,
    /// Total time suspected after the crash.
    pub suspected_while_faulty: f64,
}

impl IntervalBreakdown {
    pub fn compute(samples: &[HistorySample], threshold: f64, crash: Option<SimTime>, horizon: SimTime) -> Self {
        #[derive(PartialEq, Clone, Copy)]
        enum Class {
            Mistake,
            Good,
            Faulty,
        }
        let mut out = IntervalBreakdown::default();
        let mut current: Option<(Class, f64, f64)> = None;
        let close = |out: &mut IntervalBreakdown, run: Option<(Class, f64, f64)>| match run {
            Some((Class::Mistake, start, len)) => out.mistakes.push((start, len)),
            Some((Class::Good, start, len)) => out.good.push((start, len)),
            Some((Class::Faulty, _, len)) => out.suspected_while_faulty += len,
            None => {}
        };
        let h = horizon.as_f64();
        for (i, s) in samples.iter().enumerate() {
            let start = s.time.as_f64().min(h);
            let end = samples.get(i + 1).map_or(h, |n| n.time.as_f64().min(h));
            let len = (end - start).max(0.0);
            let class = if s.value < threshold {
                Class::Good
            } else if crash.is_some_and(|c| c <= s.time) {
                Class::Faulty
            } else {
                Class::Mistake
            };
            current = match current {
                Some((c, st, l)) if c == class => Some((c, st, l + len)),
                prev => {
                    close(&mut out, prev);
                    Some((class, start, len))
                }
            };
        }
        close(&mut out, current);
        out
    }

    pub fn total(&self) -> f64 {
        self.mistakes.iter().map(|m| m.1).sum::<f64>()
            + self.good.iter().map(|g| g.1).sum::<f64>()
            + self.suspected_while_faulty
    }
}

/// Mistake statistics of one (detector, correct process) pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MistakeStats {
    /// Gaps between consecutive mistake starts.
    pub recurrence: Vec<f64>,
    pub durations: Vec<f64>,
    /// Mistakes per unit of time.
    pub rate: f64,
    pub good_periods: Vec<f64>,
}

pub fn mistake_stats_of(samples: &[HistorySample], threshold: f64, horizon: SimTime) -> MistakeStats {
    let b = IntervalBreakdown::compute(samples, threshold, None, horizon);
    MistakeStats {
        recurrence: b.mistakes.windows(2).map(|w| w[1].0 - w[0].0).collect(),
        durations: b.mistakes.iter().map(|m| m.1).collect(),
        rate: b.mistakes.len() as f64 / horizon.as_f64(),
        good_periods: b.good.iter().map(|g| g.1).collect(),
    }
}

/// Fraction of samples whose verdict matches the ground truth.
pub fn query_accuracy_of(samples: &[HistorySample], threshold: f64, crash: Option<SimTime>) -> f64 {
    if samples.is_empty() {
        return 1.0;
    }
    let right = samples.iter().filter(|s| (s.value >= threshold) == crash.is_some_and(|c| c <= s.time)).count();
    right as f64 / samples.len() as f64
}

/// Sampled history of one run together with its ground truth.
#[derive(Debug, Clone)]
pub struct RunView<'a> {
    pub history: DetectorHistory,
    pub pattern: &'a FailurePattern,
    pub horizon: SimTime,
    pub cadence: SimTime,
    thresholds: BTreeMap<crate::model::ClusterId, f64>,
}

impl<'a> RunView<'a> {
    pub fn new(trace: &Trace, pattern: &'a FailurePattern) -> Result<Self, MetricsError> {
        let info = trace.info()?;
        Ok(RunView {
            history: trace.history(),
            pattern,
            horizon: info.horizon,
            cadence: info.cadence,
            thresholds: info.thresholds,
        })
    }

    pub fn threshold(&self, p: &ProcessId) -> Result<f64, MetricsError> {
        self.thresholds.get(&p.cluster).copied().ok_or_else(|| MetricsError::NoThreshold(p.clone()))
    }

    pub fn transitions(&self) -> TransitionLog {
        TransitionLog::from_history(&self.history, |p| {
            self.thresholds.get(&p.cluster).copied().unwrap_or(f64::INFINITY)
        })
    }

    pub fn detection_time(&self, q: &DetectorId, p: &ProcessId) -> Result<DetectionTime, MetricsError> {
        let crash = self.pattern.crash_time(p).ok_or_else(|| MetricsError::NotApplicable(p.clone(), "correct"))?;
        Ok(detection_time_of(self.history.series(q, p), self.threshold(p)?, crash))
    }

    pub fn mistake_stats(&self, q: &DetectorId, p: &ProcessId) -> Result<MistakeStats, MetricsError> {
        if self.pattern.is_faulty(p) {
            return Err(MetricsError::NotApplicable(p.clone(), "faulty"));
        }
        Ok(mistake_stats_of(self.history.series(q, p), self.threshold(p)?, self.horizon))
    }

    pub fn query_accuracy(&self, q: &DetectorId, p: &ProcessId) -> Result<f64, MetricsError> {
        Ok(query_accuracy_of(self.history.series(q, p), self.threshold(p)?, self.pattern.crash_time(p)))
    }

    pub fn breakdown(&self, q: &DetectorId, p: &ProcessId) -> Result<IntervalBreakdown, MetricsError> {
        Ok(IntervalBreakdown::compute(
            self.history.series(q, p),
            self.threshold(p)?,
            self.pattern.crash_time(p),
            self.horizon,
        ))
    }

    pub fn check_diamond_p(&self) -> DiamondPVerdict {
        let mut undetected = Vec::new();
        let mut last_mistake: Option<SimTime> = None;
        let mut stabilized = true;
        for ((q, p), samples) in self.history.iter() {
            let threshold = self.thresholds.get(&p.cluster).copied().unwrap_or(f64::INFINITY);
            match self.pattern.crash_time(p) {
                Some(crash) => {
                    if detection_time_of(samples, threshold, crash) == DetectionTime::Undetected {
                        undetected.push(format!("{q} -> {p}"));
                    }
                }
                None => {
                    if let Some(i) = samples.iter().rposition(|s| s.value >= threshold) {
                        match samples.get(i + 1) {
                            Some(next) => last_mistake = Some(last_mistake.map_or(next.time, |m| m.max(next.time))),
                            None => stabilized = false,
                        }
                    }
                }
            }
        }
        DiamondPVerdict {
            completeness: CompletenessVerdict { holds: undetected.is_empty(), undetected },
            accuracy: AccuracyVerdict {
                holds: stabilized,
                stabilized_at: stabilized.then(|| last_mistake.unwrap_or(SimTime::ZERO).as_f64()),
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletenessVerdict {
    /// Every crashed process ends the run permanently suspected by every
    /// detector monitoring it.
    pub holds: bool,
    /// `detector -> process` pairs that never settled on suspicion.
    pub undetected: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccuracyVerdict {
    /// Some time exists after which no correct process is suspected.
    pub holds: bool,
    /// Earliest such time, if the run stabilized within the horizon.
    pub stabilized_at: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiamondPVerdict {
    pub completeness: CompletenessVerdict,
    pub accuracy: AccuracyVerdict,
}

/// Count, mean, min and max of one metric.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub struct Stat {
    pub count: usize,
    pub mean: Option<f64>,
    pub min: Option<f64>,
    pub max: Option<f64>,
}

impl Stat {
    pub fn of(values: impl IntoIterator<Item = f64>) -> Stat {
        let mut s = Stat::default();
        let mut sum = 0.0;
        for v in values {
            s.count += 1;
            sum += v;
            s.min = Some(s.min.map_or(v, |m: f64| m.min(v)));
            s.max = Some(s.max.map_or(v, |m: f64| m.max(v)));
        }
        if s.count > 0 {
            s.mean = Some(sum / s.count as f64);
        }
        s
    }
}

/// Per-pair figures behind the aggregate report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairReport {
    pub detector: DetectorId,
    pub process: ProcessId,
    pub faulty: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub detection_time: Option<DetectionTime>,
    pub mistakes: usize,
    pub mistake_time: f64,
    pub good_time: f64,
    pub suspected_while_faulty: f64,
    pub query_accuracy: f64,
}

/// Message counts of one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct TrafficSummary {
    pub sent: usize,
    pub delivered: usize,
    pub dropped: usize,
    /// Suspicion gossip and membership transmissions; a broadcast counts once.
    pub gossip_transmissions: usize,
    /// Gossip transmissions per detector per unit of time.
    pub gossip_rate_per_detector: f64,
    pub inter_cluster: usize,
}

/// Topology fingerprint used to refuse comparing unrelated runs.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunShape {
    pub pairs: usize,
    pub detectors: usize,
    pub faulty: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QosReport {
    pub scenario: String,
    pub seed: u64,
    pub gossip: bool,
    pub horizon: f64,
    pub cadence: f64,
    pub shape: RunShape,
    pub detection_time: Stat,
    pub undetected: usize,
    pub mistake_recurrence: Stat,
    pub mistake_duration: Stat,
    pub mistake_rate: Stat,
    pub query_accuracy: Stat,
    pub good_period: Stat,
    pub completeness: CompletenessVerdict,
    pub accuracy: AccuracyVerdict,
    pub traffic: TrafficSummary,
    pub pairs: Vec<PairReport>,
}

impl QosReport {
    pub fn compute(scenario: &crate::scenario::Scenario, trace: &Trace) -> QosReport {
        QosReport::from_trace(trace, &scenario.pattern).expect("trace produced by the simulator has a header")
    }

    pub fn from_trace(trace: &Trace, pattern: &FailurePattern) -> Result<QosReport, MetricsError> {
        let info = trace.info()?;
        let view = RunView::new(trace, pattern)?;
        let mut pairs = Vec::new();
        let (mut td, mut rec, mut dur, mut rate, mut pa, mut good) = (vec![], vec![], vec![], vec![], vec![], vec![]);
        let mut undetected = 0;
        for (q, p) in view.history.pairs() {
            let b = view.breakdown(q, p)?;
            let accuracy = view.query_accuracy(q, p)?;
            pa.push(accuracy);
            let detection = pattern.is_faulty(p).then(|| view.detection_time(q, p)).transpose()?;
            match detection {
                Some(DetectionTime::Detected(v)) => td.push(v),
                Some(DetectionTime::Undetected) => undetected += 1,
                None => {
                    let m = view.mistake_stats(q, p)?;
                    rec.extend(m.recurrence);
                    dur.extend(m.durations);
                    rate.push(m.rate);
                    good.extend(m.good_periods);
                }
            }
            pairs.push(PairReport {
                detector: q.clone(),
                process: p.clone(),
                faulty: pattern.is_faulty(p),
                detection_time: detection,
                mistakes: b.mistakes.len(),
                mistake_time: b.mistakes.iter().map(|m| m.1).sum(),
                good_time: b.good.iter().map(|g| g.1).sum(),
                suspected_while_faulty: b.suspected_while_faulty,
                query_accuracy: accuracy,
            });
        }
        let verdict = view.check_diamond_p();
        let detectors: std::collections::BTreeSet<&DetectorId> = view.history.pairs().map(|(d, _)| d).collect();
        Ok(QosReport {
            scenario: info.name,
            seed: info.seed,
            gossip: info.gossip,
            horizon: info.horizon.as_f64(),
            cadence: info.cadence.as_f64(),
            shape: RunShape { pairs: pairs.len(), detectors: detectors.len(), faulty: pattern.faulty_set().len() },
            detection_time: Stat::of(td),
            undetected,
            mistake_recurrence: Stat::of(rec),
            mistake_duration: Stat::of(dur),
            mistake_rate: Stat::of(rate),
            query_accuracy: Stat::of(pa),
            good_period: Stat::of(good),
            completeness: verdict.completeness,
            accuracy: verdict.accuracy,
            traffic: traffic(trace, detectors.len(), info.horizon.as_f64()),
            pairs,
        })
    }
}

/// Suspicion gossip and membership transmissions sent by each detector.
pub fn gossip_transmissions(trace: &Trace) -> BTreeMap<DetectorId, usize> {
    let mut out = BTreeMap::new();
    for r in trace.records() {
        let counts = match r.kind {
            TraceKind::Broadcast => true,
            TraceKind::Send => matches!(r.detail_field("type"), Some("alert" | "recovery" | "reply" | "probe")),
            _ => false,
        };
        if counts {
            if let Some(d) = r.actor_detector() {
                *out.entry(d.clone()).or_insert(0) += 1;
            }
        }
    }
    out
}

fn traffic(trace: &Trace, detectors: usize, horizon: f64) -> TrafficSummary {
    let gossip: usize = gossip_transmissions(trace).values().sum();
    TrafficSummary {
        sent: trace.of_kind(TraceKind::Send).count(),
        delivered: trace.of_kind(TraceKind::Deliver).count(),
        dropped: trace.of_kind(TraceKind::Drop).count(),
        gossip_transmissions: gossip,
        gossip_rate_per_detector: if detectors == 0 { 0.0 } else { gossip as f64 / (detectors as f64 * horizon) },
        inter_cluster: crate::cluster::inter_cluster_traffic_count(trace),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ClusterId;

    fn series(points: &[(f64, f64)]) -> Vec<HistorySample> {
        points.iter().map(|&(t, v)| HistorySample { time: SimTime::from_f64(t), value: v }).collect()
    }

    /// One sample per unit with the given suspected instants.
    fn grid(horizon: usize, suspected: impl Fn(usize) -> bool) -> Vec<HistorySample> {
        (0..horizon)
            .map(|k| HistorySample { time: SimTime::from_f64(k as f64), value: if suspected(k) { 2.0 } else { 0.0 } })
            .collect()
    }

    #[test]
    fn detection_time_uses_final_suspicion() {
        let s = grid(200, |k| k >= 112);
        assert_eq!(detection_time_of(&s, 1.0, SimTime::from_f64(100.0)), DetectionTime::Detected(12.0));
    }

    #[test]
    fn detection_time_requires_permanence() {
        let s = grid(200, |k| (105..107).contains(&k) || k >= 110);
        assert_eq!(detection_time_of(&s, 1.0, SimTime::from_f64(100.0)), DetectionTime::Detected(10.0));
    }

    #[test]
    fn never_suspected_is_undetected() {
        let s = grid(200, |_| false);
        assert_eq!(detection_time_of(&s, 1.0, SimTime::from_f64(100.0)), DetectionTime::Undetected);
        let s = grid(200, |k| k == 150);
        assert_eq!(detection_time_of(&s, 1.0, SimTime::from_f64(100.0)), DetectionTime::Undetected);
    }

    #[test]
    fn perfect_run_has_one_good_period() {
        let m = mistake_stats_of(&grid(100, |_| false), 1.0, SimTime::from_f64(100.0));
        assert_eq!(m.rate, 0.0);
        assert_eq!(m.good_periods, vec![100.0]);
        assert!(m.durations.is_empty() && m.recurrence.is_empty());
    }

    #[test]
    fn mistake_recurrence_and_duration() {
        let s = grid(100, |k| (10..12).contains(&k) || (50..53).contains(&k));
        let m = mistake_stats_of(&s, 1.0, SimTime::from_f64(100.0));
        assert_eq!(m.recurrence, vec![40.0]);
        assert_eq!(m.durations, vec![2.0, 3.0]);
        assert_eq!(m.rate, 2.0 / 100.0);
        assert_eq!(m.good_periods, vec![10.0, 38.0, 47.0]);
    }

    #[test]
    fn accuracy_counts_matching_samples() {
        assert_eq!(query_accuracy_of(&grid(100, |_| false), 1.0, None), 1.0);
        assert_eq!(query_accuracy_of(&grid(100, |k| k % 10 == 0), 1.0, None), 0.9);
        // crash at 60, detected at 64: four wrong samples
        let s = grid(100, |k| k >= 64);
        assert_eq!(query_accuracy_of(&s, 1.0, Some(SimTime::from_f64(60.0))), 0.96);
    }

    #[test]
    fn transitions_alternate_from_trusted() {
        let s = series(&[(0.0, 2.0), (1.0, 2.0), (2.0, 0.0), (3.0, 1.0)]);
        let t = transitions(&s, 1.0);
        assert_eq!(
            t.iter().map(|x| x.1).collect::<Vec<_>>(),
            vec![Transition::Suspect, Transition::Trust, Transition::Suspect]
        );
    }

    #[test]
    fn breakdown_for_faulty_process_splits_at_crash_sample() {
        let s = grid(10, |k| k == 2 || k >= 6);
        let b = IntervalBreakdown::compute(&s, 1.0, Some(SimTime::from_f64(5.0)), SimTime::from_f64(10.0));
        assert_eq!(b.mistakes, vec![(2.0, 1.0)]);
        assert_eq!(b.suspected_while_faulty, 4.0);
        assert_eq!(b.total(), 10.0);
    }

    #[test]
    fn stat_summary() {
        let s = Stat::of([1.0, 3.0, 2.0]);
        assert_eq!((s.count, s.mean, s.min, s.max), (3, Some(2.0), Some(1.0), Some(3.0)));
        assert_eq!(Stat::of([]).mean, None);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn breakdown_partitions_the_horizon(
                values in prop::collection::vec(0.0f64..3.0, 1..200),
                cadence in 0.1f64..2.0,
                crash in prop::option::of(0.0f64..400.0),
            ) {
                let samples: Vec<HistorySample> = values
                    .iter()
                    .enumerate()
                    .map(|(k, &v)| HistorySample { time: SimTime::from_f64(k as f64 * cadence), value: v })
                    .collect();
                let horizon = SimTime::from_f64(values.len() as f64 * cadence);
                let b = IntervalBreakdown::compute(&samples, 1.0, crash.map(SimTime::from_f64), horizon);
                prop_assert!((b.total() - horizon.as_f64()).abs() < 1e-6);
                prop_assert!(b.mistakes.iter().chain(&b.good).all(|x| x.1 >= 0.0));
                let pa = query_accuracy_of(&samples, 1.0, crash.map(SimTime::from_f64));
                prop_assert!((0.0..=1.0).contains(&pa));
            }

            #[test]
            fn transitions_strictly_alternate(values in prop::collection::vec(0.0f64..3.0, 0..100)) {
                let samples: Vec<HistorySample> = values
                    .iter()
                    .enumerate()
                    .map(|(k, &v)| HistorySample { time: SimTime::from_f64(k as f64), value: v })
                    .collect();
                let t = transitions(&samples, 1.0);
                if let Some(first) = t.first() {
                    prop_assert_eq!(first.1, Transition::Suspect);
                }
                prop_assert!(t.windows(2).all(|w| w[0].1 != w[1].1 && w[0].0 < w[1].0));
            }
        }
    }

    #[test]
    fn diamond_p_on_handmade_history() {
        let a = ClusterId::new("A");
        let (d0, p0, p1) = (DetectorId::new(&a, 0), ProcessId::new(&a, 0), ProcessId::new(&a, 1));
        let mut h = DetectorHistory::new();
        for k in 0..20 {
            let t = SimTime::from_f64(k as f64);
            h.record(&d0, &p0, t, if k >= 12 { 3.0 } else { 0.0 }).unwrap();
            h.record(&d0, &p1, t, if k == 4 { 3.0 } else { 0.0 }).unwrap();
        }
        let pattern = FailurePattern::new(
            [p0.clone(), p1.clone()],
            [(p0.clone(), SimTime::from_f64(10.0))].into(),
            BTreeMap::new(),
        )
        .unwrap();
        let view = RunView {
            history: h,
            pattern: &pattern,
            horizon: SimTime::from_f64(20.0),
            cadence: SimTime::from_f64(1.0),
            thresholds: [(a, 1.0)].into(),
        };
        let v = view.check_diamond_p();
        assert!(v.completeness.holds);
        assert_eq!(v.accuracy.stabilized_at, Some(5.0));
        assert_eq!(view.detection_time(&d0, &p0).unwrap(), DetectionTime::Detected(2.0));
        assert!(view.mistake_stats(&d0, &p0).is_err());
        assert!(view.detection_time(&d0, &p1).is_err());
    }
}
