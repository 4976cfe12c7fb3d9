//! Gossip traffic per detector as the cluster grows.

use clusterfd::metrics::QosReport;
use clusterfd::{scenario, simnet};

fn main() {
    for name in ["scaling_10", "scaling_50", "scaling_100"] {
        let s = scenario::bundled(name).unwrap();
        let started = std::time::Instant::now();
        let trace = simnet::run(&s);
        let r = QosReport::compute(&s, &trace);
        println!(
            "{name:<12} detectors {:>3}  gossip/detector/unit {:.4}  records {:>8}  ({:.2?})",
            r.shape.detectors,
            r.traffic.gossip_rate_per_detector,
            trace.len(),
            started.elapsed()
        );
    }
}
