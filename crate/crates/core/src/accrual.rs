//! Accrued suspicion from missed heartbeats.
//!
//! Every heartbeat that should have arrived but has not contributes
//! `max(0, log10(t_now - t_pred + 1))`, capped at 1 by default, and the local
//! suspicion level of a process is the sum of those contributions. The
//! effective level additionally takes the minimum with fresh values reported
//! by peer detectors.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::model::{ContributionCap, DetectorId, DetectorParams, ProcessId, SimTime};
use crate::predictors::{PredictorError, PredictorState};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AccrualError {
    #[error("heartbeat #{seq} from {process} arrived out of order")]
    OutOfOrder { process: ProcessId, seq: u64 },
    #[error(transparent)]
    Predictor(#[from] PredictorError),
}

/// Raw contribution of one heartbeat expected at `t_pred`, observed at `t_now`.
pub fn raw_contribution(t_now: SimTime, t_pred: SimTime) -> f64 {
    let lateness = t_now.since(t_pred);
    if lateness <= 0.0 {
        0.0
    } else {
        (lateness + 1.0).log10().max(0.0)
    }
}

/// Contribution of one heartbeat, within `[0, 1]`: 0 while not yet expected,
/// 1 once it is considered lost.
pub fn contribution(t_now: SimTime, t_pred: SimTime) -> f64 {
    raw_contribution(t_now, t_pred).min(1.0)
}

pub fn contribution_with(cap: ContributionCap, t_now: SimTime, t_pred: SimTime) -> f64 {
    match cap {
        ContributionCap::One => contribution(t_now, t_pred),
        ContributionCap::None => raw_contribution(t_now, t_pred),
    }
}

/// A suspicion value reported by a peer detector, valid until `expires`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RemoteValue {
    pub value: f64,
    pub received: SimTime,
    pub expires: SimTime,
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Freeze {
    value: f64,
    deadline: SimTime,
}

/// Accrual state of one monitored process at one detector.
#[derive(Debug, Clone, PartialEq)]
pub struct SuspicionEntry {
    monitored: ProcessId,
    predictor: PredictorState,
    nominal_period: SimTime,
    cap: ContributionCap,
    /// Predicted arrivals of heartbeats not yet received, increasing. The last
    /// element is the only one that may still lie in the future.
    expected_arrivals: Vec<SimTime>,
    gap: f64,
    last_seq: Option<u64>,
    freeze: Option<Freeze>,
    remote_values: BTreeMap<DetectorId, RemoteValue>,
}

impl SuspicionEntry {
    /// Starts monitoring at `registered_at`; the first heartbeat is expected
    /// one nominal period later.
    pub fn new(monitored: ProcessId, params: &DetectorParams, registered_at: SimTime) -> Self {
        let period = params.heartbeat_period;
        SuspicionEntry {
            monitored,
            predictor: PredictorState::new(params.predictor, params.window_size, params.ema_alpha),
            nominal_period: period,
            cap: params.contribution_cap,
            expected_arrivals: vec![registered_at + period],
            gap: period.as_f64(),
            last_seq: None,
            freeze: None,
            remote_values: BTreeMap::new(),
        }
    }

    pub fn monitored(&self) -> &ProcessId {
        &self.monitored
    }

    pub fn predictor(&self) -> &PredictorState {
        &self.predictor
    }

    pub fn expected_arrivals(&self) -> &[SimTime] {
        &self.expected_arrivals
    }

    /// Currently predicted heartbeat inter-arrival.
    pub fn predicted_gap(&self) -> f64 {
        self.gap
    }

    pub fn last_arrival(&self) -> Option<SimTime> {
        self.predictor.window().last_arrival()
    }

    pub fn is_frozen(&self) -> bool {
        self.freeze.is_some()
    }

    pub fn freeze_deadline(&self) -> Option<SimTime> {
        self.freeze.map(|f| f.deadline)
    }

    pub fn remote_values(&self) -> &BTreeMap<DetectorId, RemoteValue> {
        &self.remote_values
    }

    /// Materialises the expected arrivals due by `t`: while the process stays
    /// silent a new heartbeat is expected every predicted gap. Drops expired
    /// remote values.
    pub fn advance(&mut self, t: SimTime) {
        while let Some(&last) = self.expected_arrivals.last() {
            if last > t {
                break;
            }
            self.expected_arrivals.push(last + self.gap);
        }
        self.remote_values.retain(|_, rv| rv.expires > t);
    }

    /// Sum of contributions at `t`, ignoring any freeze.
    pub fn accrued(&self, t: SimTime) -> f64 {
        let mut total = 0.0;
        let mut last = None;
        for &e in &self.expected_arrivals {
            if e > t {
                return total;
            }
            total += contribution_with(self.cap, t, e);
            last = Some(e);
        }
        // extend lazily past what `advance` has materialised
        if let Some(mut e) = last {
            loop {
                e = e + self.gap;
                if e > t {
                    break;
                }
                total += contribution_with(self.cap, t, e);
            }
        }
        total
    }

    /// Local suspicion level at `t`. While frozen, and before the freeze
    /// deadline, the value captured at freeze time is reported.
    pub fn local_suspicion(&self, t: SimTime) -> f64 {
        match self.freeze {
            Some(f) if t < f.deadline => f.value,
            _ => self.accrued(t),
        }
    }

    /// Smallest value among the local level and unexpired peer reports.
    pub fn effective_suspicion(&self, t: SimTime) -> f64 {
        self.remote_values
            .values()
            .filter(|rv| rv.expires > t)
            .map(|rv| rv.value)
            .fold(self.local_suspicion(t), f64::min)
    }

    /// Peers whose unexpired reports currently hold the effective level below
    /// `level`, in id order.
    pub fn vetoing_peers(&self, t: SimTime, level: f64) -> Vec<DetectorId> {
        self.remote_values.iter().filter(|(_, rv)| rv.expires > t && rv.value < level).map(|(d, _)| d.clone()).collect()
    }

    pub fn earliest_remote_expiry(&self, t: SimTime) -> Option<SimTime> {
        self.remote_values.values().map(|rv| rv.expires).filter(|&e| e > t).min()
    }

    /// Applies a heartbeat. All pending expectations are settled, the forecast
    /// is refreshed and the next arrival is expected one predicted gap later.
    pub fn on_heartbeat(&mut self, arrival: SimTime, seq: u64) -> Result<(), AccrualError> {
        if self.last_seq.is_some_and(|last| seq <= last) {
            return Err(AccrualError::OutOfOrder { process: self.monitored.clone(), seq });
        }
        self.predictor.observe_arrival(arrival).map_err(|e| match e {
            PredictorError::OutOfOrder { .. } => AccrualError::OutOfOrder { process: self.monitored.clone(), seq },
            other => AccrualError::Predictor(other),
        })?;
        self.last_seq = Some(seq);
        self.gap = self.predictor.predict().unwrap_or(self.nominal_period.as_f64());
        let next = self.predictor.next_expected_arrival(arrival, self.nominal_period);
        self.expected_arrivals.clear();
        self.expected_arrivals.push(next);
        self.freeze = None;
        Ok(())
    }

    /// Stops local growth until `deadline`, keeping the current value.
    pub fn freeze(&mut self, t: SimTime, deadline: SimTime) {
        let value = self.local_suspicion(t);
        self.freeze = Some(Freeze { value, deadline });
    }

    pub fn unfreeze(&mut self) -> bool {
        self.freeze.take().is_some()
    }

    pub fn record_remote(&mut self, from: &DetectorId, value: f64, received: SimTime, expires: SimTime) {
        self.remote_values.insert(from.clone(), RemoteValue { value: value.max(0.0), received, expires });
    }

    /// Earliest `t' >= from` at which the unfrozen local level reaches
    /// `level`, assuming no further heartbeat arrives.
    pub fn time_accrued_reaches(&self, level: f64, from: SimTime) -> SimTime {
        if self.accrued(from) >= level {
            return from;
        }
        let mut step = self.gap.max(1e-6);
        let mut lo = from;
        let mut hi = from + step;
        let mut guard = 0;
        while self.accrued(hi) < level {
            lo = hi;
            step *= 2.0;
            hi = from + step;
            guard += 1;
            if guard > 200 {
                // accrual is unbounded, this is never hit in practice
                return hi;
            }
        }
        for _ in 0..200 {
            let mid = SimTime::from_f64(0.5 * (lo.as_f64() + hi.as_f64()));
            if mid <= lo || mid >= hi {
                break;
            }
            if self.accrued(mid) >= level {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        hi
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ClusterId, PredictorKind};

    fn t(v: f64) -> SimTime {
        SimTime::from_f64(v)
    }

    fn entry() -> SuspicionEntry {
        let params = DetectorParams::with_period(1.0);
        SuspicionEntry::new(ProcessId::new(&ClusterId::new("A"), 0), &params, SimTime::ZERO)
    }

    fn peer(i: u32) -> DetectorId {
        DetectorId::new(&ClusterId::new("A"), i)
    }

    #[test]
    fn contribution_examples() {
        assert_eq!(contribution(t(5.0), t(5.0)), 0.0);
        assert!((contribution(t(14.0), t(5.0)) - 1.0).abs() < 1e-12);
        assert_eq!(contribution(t(0.0), t(5.0)), 0.0);
        assert_eq!(contribution(t(104.0), t(5.0)), 1.0);
        assert!((raw_contribution(t(104.0), t(5.0)) - 2.0).abs() < 1e-12);
    }

    #[test]
    fn healthy_entry_has_zero_suspicion() {
        let e = entry();
        assert_eq!(e.local_suspicion(t(0.5)), 0.0);
        assert_eq!(e.local_suspicion(t(1.0)), 0.0);
    }

    #[test]
    fn single_miss_nine_units_late_is_one() {
        let mut e = entry();
        e.on_heartbeat(t(0.0), 0).unwrap();
        e.on_heartbeat(t(10.0), 1).unwrap();
        // gap 10, next expected at 20; a gap-sized step makes sure only one miss counts
        assert_eq!(e.expected_arrivals(), &[t(20.0)]);
        assert!((e.local_suspicion(t(29.0)) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn three_long_misses_count_three() {
        let mut e = entry();
        for (i, at) in [0.0, 1.0, 2.0].into_iter().enumerate() {
            e.on_heartbeat(t(at), i as u64).unwrap();
        }
        // expected at 3, 4, 5, ...; at t = 14 the first three are >= 9 late
        let now = t(14.0);
        let expected: f64 = (3..=14).map(|k| contribution(now, t(k as f64))).sum();
        assert!((e.local_suspicion(now) - expected).abs() < 1e-12);
        assert!(e.local_suspicion(now) >= 3.0);
        assert_eq!(contribution(now, t(5.0)), 1.0);
    }

    #[test]
    fn advance_materialises_missed_expectations() {
        let mut e = entry();
        e.on_heartbeat(t(0.0), 0).unwrap();
        e.advance(t(3.5));
        assert_eq!(e.expected_arrivals(), &[t(1.0), t(2.0), t(3.0), t(4.0)]);
        let lazy = entry_with_hb(0.0).local_suspicion(t(3.5));
        assert_eq!(e.local_suspicion(t(3.5)), lazy);
    }

    fn entry_with_hb(at: f64) -> SuspicionEntry {
        let mut e = entry();
        e.on_heartbeat(t(at), 0).unwrap();
        e
    }

    #[test]
    fn heartbeat_clears_pending_contributions() {
        let mut e = entry_with_hb(0.0);
        e.advance(t(4.0));
        assert!(e.local_suspicion(t(4.0)) > 1.0);
        e.on_heartbeat(t(4.0), 1).unwrap();
        assert_eq!(e.local_suspicion(t(4.0)), 0.0);
    }

    #[test]
    fn first_two_heartbeats_set_constant_gap() {
        let params = DetectorParams { predictor: PredictorKind::Sma, ..DetectorParams::with_period(5.0) };
        let mut e = SuspicionEntry::new(ProcessId::new(&ClusterId::new("A"), 0), &params, SimTime::ZERO);
        e.on_heartbeat(t(0.0), 0).unwrap();
        e.on_heartbeat(t(5.0), 1).unwrap();
        assert_eq!(e.expected_arrivals(), &[t(10.0)]);
    }

    #[test]
    fn heartbeat_unfreezes() {
        let mut e = entry_with_hb(0.0);
        e.freeze(t(3.0), t(5.0));
        assert!(e.is_frozen());
        e.on_heartbeat(t(3.5), 1).unwrap();
        assert!(!e.is_frozen());
    }

    #[test]
    fn freeze_holds_value_until_deadline() {
        let mut e = entry_with_hb(0.0);
        e.freeze(t(3.0), t(5.0));
        let held = e.local_suspicion(t(3.0));
        assert_eq!(e.local_suspicion(t(4.9)), held);
        assert!(e.local_suspicion(t(5.0)) > held);
    }

    #[test]
    fn duplicate_or_stale_heartbeat_is_rejected() {
        let mut e = entry_with_hb(1.0);
        assert!(matches!(e.on_heartbeat(t(2.0), 0), Err(AccrualError::OutOfOrder { .. })));
        assert!(e.on_heartbeat(t(1.0), 5).is_err());
        e.on_heartbeat(t(2.0), 5).unwrap();
    }

    #[test]
    fn effective_is_min_over_fresh_values() {
        let mut e = entry_with_hb(0.0);
        // local at 3.0: log10(3) + log10(2) ~ 0.778
        let now = t(3.0);
        let local = e.local_suspicion(now);
        assert!(local > 0.7 && local < 0.8);
        e.record_remote(&peer(1), 0.3, now, t(10.0));
        assert_eq!(e.effective_suspicion(now), 0.3);
        assert!(e.effective_suspicion(t(10.0)) > 0.3);
        assert_eq!(entry().effective_suspicion(t(0.5)), 0.0);
        e.record_remote(&peer(2), 50.0, now, t(10.0));
        assert_eq!(e.effective_suspicion(now), 0.3);
        assert_eq!(e.vetoing_peers(now, 1.0), vec![peer(1)]);
    }

    #[test]
    fn crossing_time_matches_bisection_target() {
        let e = entry_with_hb(0.0);
        let at = e.time_accrued_reaches(1.0, t(0.0));
        assert!(e.accrued(at) >= 1.0);
        assert!(e.accrued(at + (-1e-6)) < 1.0);
        assert_eq!(e.time_accrued_reaches(0.0, t(0.4)), t(0.4));
    }

    #[test]
    fn uncapped_mode_exceeds_one_per_miss() {
        let params = DetectorParams { contribution_cap: ContributionCap::None, ..DetectorParams::with_period(100.0) };
        let mut e = SuspicionEntry::new(ProcessId::new(&ClusterId::new("A"), 0), &params, SimTime::ZERO);
        e.on_heartbeat(t(0.0), 0).unwrap();
        assert!((e.local_suspicion(t(199.0)) - 2.0).abs() < 1e-12);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn contribution_is_bounded_and_monotone(pred in 0.0f64..1e4, a in 0.0f64..1e4, b in 0.0f64..1e4) {
                let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
                let c_lo = contribution(t(lo), t(pred));
                let c_hi = contribution(t(hi), t(pred));
                prop_assert!((0.0..=1.0).contains(&c_lo));
                prop_assert!(c_lo <= c_hi);
            }

            #[test]
            fn effective_never_exceeds_local(
                gaps in proptest::collection::vec(0.2f64..3.0, 1..10),
                probe in 0.0f64..40.0,
                remotes in proptest::collection::vec((0.0f64..5.0, 0.0f64..60.0), 0..4),
            ) {
                let mut e = entry();
                let mut now = 0.0;
                for (i, g) in gaps.iter().enumerate() {
                    now += g;
                    e.on_heartbeat(t(now), i as u64).unwrap();
                }
                for (i, (v, exp)) in remotes.iter().enumerate() {
                    e.record_remote(&peer(i as u32), *v, t(now), t(*exp));
                }
                let at = t(now + probe);
                prop_assert!(e.effective_suspicion(at) <= e.local_suspicion(at));
            }

            #[test]
            fn silent_process_accrues_monotonically(
                gaps in proptest::collection::vec(0.5f64..2.0, 2..8),
                probes in proptest::collection::vec(0.0f64..30.0, 2..20),
            ) {
                let mut e = entry();
                let mut now = 0.0;
                for (i, g) in gaps.iter().enumerate() {
                    now += g;
                    e.on_heartbeat(t(now), i as u64).unwrap();
                }
                let mut probes = probes;
                probes.sort_by(f64::total_cmp);
                let values: Vec<f64> = probes.iter().map(|p| e.local_suspicion(t(now + p))).collect();
                prop_assert!(values.windows(2).all(|w| w[0] <= w[1]));
            }
        }
    }
}
