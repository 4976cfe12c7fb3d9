//! Builds a scenario from text, shows validation errors, then runs it.

use clusterfd::metrics::QosReport;
use clusterfd::{scenario, simnet};

const BROKEN: &str = r#"
horizon = 0.0
[[clusters]]
name = "A"
processes = 2
detectors = 1
[[faults]]
kind = "crash"
process = "A/p9"
at = 5.0
"#;

const GOOD: &str = r#"
name = "ring"
horizon = 60.0
seed = 9
[link]
loss = 0.02
[[clusters]]
name = "A"
processes = 6
detectors = 3
monitoring = { ring = 2 }
[clusters.detector]
predictor = "ema"
threshold = 1.5
[[faults]]
kind = "crash"
process = "A/p4"
at = 20.0
"#;

fn main() {
    match scenario::validate(BROKEN) {
        Ok(_) => println!("unexpectedly valid"),
        Err(diagnostics) => println!("rejected:\n{diagnostics}\n"),
    }
    let s = scenario::validate(GOOD).unwrap();
    for d in s.topology.detectors() {
        let watched: Vec<String> = s.topology.monitored_by(d).iter().map(ToString::to_string).collect();
        println!("{d} watches {}", watched.join(", "));
    }
    let r = QosReport::compute(&s, &simnet::run(&s));
    println!("T_D mean {:?}, completeness {}", r.detection_time.mean, r.completeness.holds);
}
