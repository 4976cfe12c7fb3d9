//! Heartbeat inter-arrival prediction.
//!
//! A detector keeps a sliding window of the most recent inter-arrival
//! durations of one monitored process and forecasts the next one. Four
//! forecasters are available: simple, restricted, weighted and exponential
//! moving averages. The free functions evaluate a forecaster from scratch over
//! a slice; [`PredictorState`] maintains the same quantities incrementally
//! with running sums.

use std::collections::VecDeque;

use thiserror::Error;

use crate::model::{PredictorKind, SimTime};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PredictorError {
    #[error("insufficient samples")]
    InsufficientSamples,
    #[error("heartbeat at {arrival} is not after the previous one at {previous}")]
    OutOfOrder { arrival: SimTime, previous: SimTime },
}

/// Unweighted mean of the samples.
pub fn predict_sma(interarrivals: &[f64]) -> Result<f64, PredictorError> {
    if interarrivals.is_empty() {
        return Err(PredictorError::InsufficientSamples);
    }
    Ok(interarrivals.iter().sum::<f64>() / interarrivals.len() as f64)
}

/// Moving average that never forecasts above the most recent real sample.
pub fn predict_restricted_ma(interarrivals: &[f64]) -> Result<f64, PredictorError> {
    let mean = predict_sma(interarrivals)?;
    let last = *interarrivals.last().expect("non-empty after sma");
    Ok(restrict(mean, last))
}

fn restrict(mean: f64, last: f64) -> f64 {
    if mean > last {
        last
    } else {
        mean
    }
}

/// Weighted mean with arithmetically decreasing weights: the newest of `n`
/// samples weighs `n`, the oldest weighs 1. Slices are oldest first.
pub fn predict_wma(interarrivals: &[f64]) -> Result<f64, PredictorError> {
    if interarrivals.is_empty() {
        return Err(PredictorError::InsufficientSamples);
    }
    let n = interarrivals.len();
    let numerator: f64 = interarrivals.iter().enumerate().map(|(i, x)| (i + 1) as f64 * x).sum();
    Ok(numerator / (n * (n + 1) / 2) as f64)
}

/// Exponential smoothing state.
///
/// The smoothed value is undefined until `warmup` samples have been seen; it
/// is then seeded with their plain average and updated once per new sample as
/// `S' = alpha * L + (1 - alpha) * S`.
#[derive(Debug, Clone, PartialEq)]
pub struct EmaState {
    pub alpha: f64,
    pub warmup: usize,
    seen: usize,
    warmup_sum: f64,
    value: Option<f64>,
}

impl EmaState {
    pub fn new(alpha: f64, warmup: usize) -> Self {
        EmaState { alpha, warmup: warmup.max(1), seen: 0, warmup_sum: 0.0, value: None }
    }

    /// A state already seeded with smoothed value `s`.
    pub fn initialized(alpha: f64, warmup: usize, s: f64) -> Self {
        EmaState { alpha, warmup: warmup.max(1), seen: warmup.max(1), warmup_sum: 0.0, value: Some(s) }
    }

    pub fn value(&self) -> Option<f64> {
        self.value
    }

    pub fn samples_seen(&self) -> usize {
        self.seen
    }
}

/// Feeds one sample into an exponential smoother.
pub fn ema_step(state: &EmaState, sample: f64) -> EmaState {
    let mut next = state.clone();
    next.seen += 1;
    match state.value {
        Some(s) => next.value = Some(state.alpha * sample + (1.0 - state.alpha) * s),
        None => {
            next.warmup_sum += sample;
            if next.seen >= state.warmup {
                next.value = Some(next.warmup_sum / next.seen as f64);
            }
        }
    }
    next
}

/// Sliding window over the last `capacity` inter-arrival durations, with the
/// running sums the averaging forecasters need.
#[derive(Debug, Clone, PartialEq)]
pub struct HeartbeatWindow {
    capacity: usize,
    last_arrival: Option<SimTime>,
    arrivals_seen: u64,
    samples: VecDeque<f64>,
    sum: f64,
    /// Sum of `weight * sample`, newest weighing `len`.
    weighted_sum: f64,
}

impl HeartbeatWindow {
    pub fn new(capacity: usize) -> Self {
        HeartbeatWindow {
            capacity: capacity.max(1),
            last_arrival: None,
            arrivals_seen: 0,
            samples: VecDeque::with_capacity(capacity.max(1)),
            sum: 0.0,
            weighted_sum: 0.0,
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn last_arrival(&self) -> Option<SimTime> {
        self.last_arrival
    }

    pub fn arrivals_seen(&self) -> u64 {
        self.arrivals_seen
    }

    /// Inter-arrival durations, oldest first.
    pub fn interarrivals(&self) -> impl ExactSizeIterator<Item = f64> + '_ {
        self.samples.iter().copied()
    }

    pub fn to_vec(&self) -> Vec<f64> {
        self.samples.iter().copied().collect()
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn latest(&self) -> Option<f64> {
        self.samples.back().copied()
    }

    /// Records a heartbeat arrival. Returns the new inter-arrival, if any.
    pub fn push_arrival(&mut self, arrival: SimTime) -> Result<Option<f64>, PredictorError> {
        let gap = match self.last_arrival {
            Some(previous) if arrival <= previous => return Err(PredictorError::OutOfOrder { arrival, previous }),
            Some(previous) => Some(arrival.since(previous)),
            None => None,
        };
        self.last_arrival = Some(arrival);
        self.arrivals_seen += 1;
        if let Some(gap) = gap {
            self.push_sample(gap);
        }
        Ok(gap)
    }

    /// Appends a raw inter-arrival sample, evicting the oldest when full.
    pub fn push_sample(&mut self, x: f64) {
        if self.samples.len() == self.capacity {
            let oldest = self.samples.pop_front().expect("full window");
            // every remaining weight drops by one, the evicted sample had weight 1
            self.weighted_sum -= self.sum;
            self.sum -= oldest;
        }
        self.samples.push_back(x);
        self.sum += x;
        self.weighted_sum += self.samples.len() as f64 * x;
    }

    fn sma(&self) -> Option<f64> {
        (!self.samples.is_empty()).then(|| self.sum / self.samples.len() as f64)
    }

    fn wma(&self) -> Option<f64> {
        let n = self.samples.len();
        (n > 0).then(|| self.weighted_sum / (n * (n + 1) / 2) as f64)
    }
}

/// Per-process forecaster state: the window plus exponential smoothing.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictorState {
    kind: PredictorKind,
    window: HeartbeatWindow,
    ema: EmaState,
    last_prediction: Option<f64>,
}

impl PredictorState {
    pub fn new(kind: PredictorKind, window_size: usize, ema_alpha: f64) -> Self {
        PredictorState {
            kind,
            window: HeartbeatWindow::new(window_size),
            ema: EmaState::new(ema_alpha, window_size),
            last_prediction: None,
        }
    }

    pub fn kind(&self) -> PredictorKind {
        self.kind
    }

    pub fn window(&self) -> &HeartbeatWindow {
        &self.window
    }

    pub fn ema(&self) -> &EmaState {
        &self.ema
    }

    pub fn last_prediction(&self) -> Option<f64> {
        self.last_prediction
    }

    /// Records a heartbeat arrival and refreshes the forecast.
    pub fn observe_arrival(&mut self, arrival: SimTime) -> Result<(), PredictorError> {
        if let Some(gap) = self.window.push_arrival(arrival)? {
            self.absorb(gap);
        }
        Ok(())
    }

    /// Records an inter-arrival duration directly.
    pub fn observe_interarrival(&mut self, gap: f64) {
        self.window.push_sample(gap);
        self.absorb(gap);
    }

    fn absorb(&mut self, gap: f64) {
        self.ema = ema_step(&self.ema, gap);
        self.last_prediction = self.predict();
    }

    /// Forecast of the next inter-arrival, `None` before any sample.
    pub fn predict(&self) -> Option<f64> {
        match self.kind {
            PredictorKind::Sma => self.window.sma(),
            PredictorKind::RestrictedMa => Some(restrict(self.window.sma()?, self.window.latest()?)),
            PredictorKind::Wma => self.window.wma(),
            // a partial window falls back to its plain average until the smoother is seeded
            PredictorKind::Ema => self.ema.value().or_else(|| self.window.sma()),
        }
    }

    /// When the next heartbeat should arrive. Falls back to the nominal
    /// period while fewer than two heartbeats have been seen.
    pub fn next_expected_arrival(&self, last_arrival: SimTime, nominal_period: SimTime) -> SimTime {
        let gap = self.predict().unwrap_or(nominal_period.as_f64());
        last_arrival + gap
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64) -> bool {
        (a - b).abs() < 1e-12
    }

    #[test]
    fn sma_examples() {
        assert_eq!(predict_sma(&[3.0; 5]).unwrap(), 3.0);
        assert_eq!(predict_sma(&[1.0, 2.0, 3.0, 4.0, 5.0]).unwrap(), 3.0);
        assert_eq!(predict_sma(&[10.0]).unwrap(), 10.0);
        assert_eq!(predict_sma(&[]), Err(PredictorError::InsufficientSamples));
    }

    #[test]
    fn restricted_ma_examples() {
        assert_eq!(predict_restricted_ma(&[1.0, 2.0, 3.0, 4.0, 5.0]).unwrap(), 3.0);
        assert_eq!(predict_restricted_ma(&[5.0, 4.0, 3.0, 2.0, 1.0]).unwrap(), 1.0);
        assert_eq!(predict_restricted_ma(&[2.0, 2.0, 2.0]).unwrap(), 2.0);
        assert!(predict_restricted_ma(&[]).is_err());
    }

    #[test]
    fn wma_examples() {
        assert!(close(predict_wma(&[7.5; 5]).unwrap(), 7.5));
        assert!(close(predict_wma(&[1.0, 2.0, 3.0, 4.0, 5.0]).unwrap(), 55.0 / 15.0));
        assert!(close(predict_wma(&[0.0, 10.0]).unwrap(), 20.0 / 3.0));
        assert!(predict_wma(&[]).is_err());
    }

    #[test]
    fn ema_examples() {
        let s = EmaState::initialized(1.0, 5, 4.0);
        assert_eq!(ema_step(&s, 7.0).value(), Some(7.0));
        let s = EmaState::initialized(0.0, 5, 4.0);
        assert_eq!(ema_step(&s, 123.0).value(), Some(4.0));
        let s = EmaState::initialized(0.5, 5, 4.0);
        assert_eq!(ema_step(&s, 8.0).value(), Some(6.0));
    }

    #[test]
    fn ema_seeds_with_average_of_first_window() {
        let mut s = EmaState::new(0.5, 3);
        for x in [1.0, 2.0] {
            s = ema_step(&s, x);
            assert_eq!(s.value(), None);
        }
        s = ema_step(&s, 6.0);
        assert_eq!(s.value(), Some(3.0));
        s = ema_step(&s, 5.0);
        assert_eq!(s.value(), Some(4.0));
    }

    #[test]
    fn next_expected_arrival_uses_constant_gap() {
        let mut p = PredictorState::new(PredictorKind::Sma, 5, 0.25);
        for t in [0.0, 2.0, 4.0, 6.0] {
            p.observe_arrival(SimTime::from_f64(t)).unwrap();
        }
        let next = p.next_expected_arrival(SimTime::from_f64(6.0), SimTime::from_f64(5.0));
        assert_eq!(next, SimTime::from_f64(8.0));
    }

    #[test]
    fn cold_start_falls_back_to_nominal_period() {
        let p = PredictorState::new(PredictorKind::Ema, 5, 0.25);
        let next = p.next_expected_arrival(SimTime::ZERO, SimTime::from_f64(5.0));
        assert_eq!(next, SimTime::from_f64(5.0));

        let mut p = PredictorState::new(PredictorKind::Wma, 5, 0.25);
        p.observe_arrival(SimTime::from_f64(3.0)).unwrap();
        let next = p.next_expected_arrival(SimTime::from_f64(3.0), SimTime::from_f64(5.0));
        assert_eq!(next, SimTime::from_f64(8.0));
    }

    #[test]
    fn ema_prediction_is_last_plus_smoothed_gap() {
        let mut p = PredictorState::new(PredictorKind::Ema, 2, 0.5);
        for t in [0.0, 2.0, 6.0, 14.0] {
            p.observe_arrival(SimTime::from_f64(t)).unwrap();
        }
        // gaps 2, 4, 8: seeded with 3 after two, then 0.5 * 8 + 0.5 * 3
        assert_eq!(p.predict(), Some(5.5));
        assert_eq!(p.next_expected_arrival(SimTime::from_f64(14.0), SimTime::from_f64(1.0)), SimTime::from_f64(19.5));
    }

    #[test]
    fn out_of_order_arrivals_are_rejected() {
        let mut w = HeartbeatWindow::new(3);
        w.push_arrival(SimTime::from_f64(5.0)).unwrap();
        assert!(matches!(w.push_arrival(SimTime::from_f64(5.0)), Err(PredictorError::OutOfOrder { .. })));
        assert!(w.push_arrival(SimTime::from_f64(4.0)).is_err());
        assert_eq!(w.arrivals_seen(), 1);
    }

    #[test]
    fn window_keeps_only_the_latest_samples() {
        let mut w = HeartbeatWindow::new(3);
        for x in [1.0, 2.0, 3.0, 4.0, 5.0] {
            w.push_sample(x);
        }
        assert_eq!(w.to_vec(), vec![3.0, 4.0, 5.0]);
        assert!(close(w.wma().unwrap(), predict_wma(&[3.0, 4.0, 5.0]).unwrap()));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn kinds() -> impl Strategy<Value = PredictorKind> {
            prop_oneof![
                Just(PredictorKind::Sma),
                Just(PredictorKind::RestrictedMa),
                Just(PredictorKind::Wma),
                Just(PredictorKind::Ema),
            ]
        }

        proptest! {
            #[test]
            fn forecast_stays_within_sample_range(
                kind in kinds(),
                window in 2usize..9,
                alpha in 0.01f64..0.99,
                stream in proptest::collection::vec(0.01f64..50.0, 1..60),
            ) {
                let mut p = PredictorState::new(kind, window, alpha);
                for &x in &stream {
                    p.observe_interarrival(x);
                }
                let pred = p.predict().unwrap();
                let (lo, hi) = if kind == PredictorKind::Ema && stream.len() >= window {
                    // the smoother remembers the whole stream, not just the window
                    (
                        stream.iter().cloned().fold(f64::INFINITY, f64::min),
                        stream.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
                    )
                } else {
                    let w = p.window().to_vec();
                    (
                        w.iter().cloned().fold(f64::INFINITY, f64::min),
                        w.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
                    )
                };
                prop_assert!(pred >= lo - 1e-9 && pred <= hi + 1e-9, "{pred} not in [{lo}, {hi}]");
                if kind == PredictorKind::RestrictedMa {
                    prop_assert!(pred <= *stream.last().unwrap());
                }
            }

            #[test]
            fn ema_converges_geometrically_on_constant_stream(
                alpha in 0.05f64..0.95,
                seed_value in 0.1f64..20.0,
                c in 0.1f64..20.0,
                steps in 1usize..40,
            ) {
                let mut s = EmaState::initialized(alpha, 5, seed_value);
                for k in 1..=steps {
                    s = ema_step(&s, c);
                    let bound = (1.0 - alpha).powi(k as i32) * (seed_value - c).abs();
                    prop_assert!((s.value().unwrap() - c).abs() <= bound + 1e-12);
                }
            }
        }
    }
}
