//! Feeds one jittery heartbeat stream to every forecaster.

use clusterfd::model::{PredictorKind, SimTime};
use clusterfd::predictors::PredictorState;
use clusterfd::simnet::RandomStream;
use rand::Rng;

fn main() {
    let kinds = [PredictorKind::Sma, PredictorKind::RestrictedMa, PredictorKind::Wma, PredictorKind::Ema];
    let mut states: Vec<PredictorState> = kinds.iter().map(|&k| PredictorState::new(k, 5, 0.25)).collect();
    let mut rng = RandomStream::new(42).substream("arrivals");

    println!("{:>6} {:>8}  {:>8} {:>8} {:>8} {:>8}", "beat", "gap", "sma", "rma", "wma", "ema");
    let mut at = 0.0;
    for beat in 1..=20 {
        // the period doubles halfway through
        let period = if beat <= 10 { 1.0 } else { 2.0 };
        let gap = period + rng.random_range(-0.1..0.1);
        at += gap;
        let mut row = format!("{beat:>6} {gap:>8.3} ");
        for s in &mut states {
            s.observe_arrival(SimTime::from_f64(at)).unwrap();
            match s.predict() {
                Some(f) => row.push_str(&format!(" {f:>8.3}")),
                None => row.push_str(&format!(" {:>8}", "-")),
            }
        }
        println!("{row}");
    }
}
