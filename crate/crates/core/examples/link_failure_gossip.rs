//! One detector loses its link to the process while a peer still hears it.

use clusterfd::metrics::QosReport;
use clusterfd::simnet::{self, TraceKind};
use clusterfd::{scenario, DetectorId, ProcessId};

fn main() {
    let base = scenario::bundled("link_failure").unwrap();
    let d0: DetectorId = "A/d0".parse().unwrap();
    let p0: ProcessId = "A/p0".parse().unwrap();

    for gossip in [true, false] {
        let s = base.with_gossip(gossip);
        let trace = simnet::run(&s);
        let report = QosReport::compute(&s, &trace);
        println!("gossip {}", if gossip { "on" } else { "off" });
        for r in trace.records().iter().filter(|r| r.actor_detector() == Some(&d0) && r.subject_process() == Some(&p0))
        {
            if matches!(
                r.kind,
                TraceKind::CrossUp
                    | TraceKind::CrossDown
                    | TraceKind::Freeze
                    | TraceKind::Unfreeze
                    | TraceKind::Isolated
            ) {
                println!("  t={:>9.4} {:?} {}", r.time.as_f64(), r.kind, r.detail);
            }
        }
        let history = trace.history();
        let last = history.series(&d0, &p0).last().unwrap();
        println!("  final effective suspicion {:.3}", last.value);
        println!("  mistakes {}, accuracy holds: {}\n", report.mistake_duration.count, report.accuracy.holds);
    }
}
