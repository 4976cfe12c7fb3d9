//! How the suspicion of one process accrues once its heartbeats stop.

use clusterfd::accrual::SuspicionEntry;
use clusterfd::model::DetectorParams;
use clusterfd::{ClusterId, ProcessId, SimTime};

fn main() {
    let params = DetectorParams::with_period(1.0);
    let p = ProcessId::new(&ClusterId::new("A"), 0);
    let mut entry = SuspicionEntry::new(p.clone(), &params, SimTime::ZERO);

    for seq in 1..=10u64 {
        entry.on_heartbeat(SimTime::from_f64(seq as f64), seq).unwrap();
    }
    println!("{p} stops sending after t=10 (predicted gap {:.3})", entry.predicted_gap());

    for tenth in (100..=160).step_by(5) {
        let t = SimTime::from_f64(tenth as f64 / 10.0);
        entry.advance(t);
        println!("t={:>5.1}  suspicion {:.4}", t.as_f64(), entry.local_suspicion(t));
    }

    let tv = params.threshold;
    let crossing = entry.time_accrued_reaches(tv, SimTime::from_f64(10.0));
    println!("suspicion reaches {tv} at t={:.4}", crossing.as_f64());
}
