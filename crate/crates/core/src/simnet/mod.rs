//! Deterministic discrete-event simulation of processes, detectors and links.
//!
//! Everything random is drawn from named substreams of one seed, so a
//! scenario and a seed fully determine the trace.

mod engine;
mod trace;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use engine::run;
pub use trace::{Trace, TraceError, TraceInfo, TraceKind, TraceRecord};

use crate::model::DetectorHistory;
use crate::scenario::Scenario;

/// A seed from which independent, named random streams are derived.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RandomStream {
    seed: u64,
}

impl RandomStream {
    pub fn new(seed: u64) -> Self {
        RandomStream { seed }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// The stream owned by one consumer, e.g. `detector/A/d0` or
    /// `link/A/p0->A/d1`.
    pub fn substream(&self, name: &str) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(fnv1a(name.as_bytes()));
        rng
    }
}

fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325, |h, &b| (h ^ u64::from(b)).wrapping_mul(0x0100_0000_01b3))
}

/// Delay and loss of one directed link.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinkModel {
    pub base_delay: f64,
    /// Half-width of the uniform jitter around `base_delay`.
    pub jitter: f64,
    pub loss_probability: f64,
}

impl Default for LinkModel {
    fn default() -> Self {
        LinkModel { base_delay: 0.05, jitter: 0.02, loss_probability: 0.0 }
    }
}

impl LinkModel {
    /// Draws the fate of one message: `None` if lost, else its delay.
    /// Always consumes the same amount of randomness.
    pub fn transmit(&self, rng: &mut impl Rng) -> Option<f64> {
        let lost = rng.random::<f64>() < self.loss_probability;
        let u: f64 = rng.random();
        let delay = self.base_delay + self.jitter * (2.0 * u - 1.0);
        (!lost).then_some(delay.max(f64::MIN_POSITIVE))
    }
}

/// The detector history `H(q, t)(p)` seen by the sampler during a run.
pub fn sample_queries(scenario: &Scenario, trace: &Trace) -> DetectorHistory {
    let cadence = scenario.cadence.as_f64();
    let mut history = DetectorHistory::new();
    for r in trace.of_kind(TraceKind::Sample) {
        let k = (r.time.as_f64() / cadence).round();
        if (k * cadence - r.time.as_f64()).abs() > 1e-9 * cadence.max(1.0) {
            continue;
        }
        if let (Some(d), Some(p), Some(v)) = (r.actor_detector(), r.subject_process(), r.value) {
            history.record(d, p, r.time, v).expect("samples are ordered");
        }
    }
    history
}
