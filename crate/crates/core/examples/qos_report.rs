//! Runs the crash scenario and writes every report artifact.

use clusterfd::metrics::QosReport;
use clusterfd::{report, scenario, simnet};

fn main() {
    let s = scenario::bundled("crash").unwrap();
    let trace = simnet::run(&s);
    let qos = QosReport::compute(&s, &trace);
    print!("{}", report::render_text(&qos));

    let dir = std::env::temp_dir().join("clusterfd-qos-report");
    let files = report::write_run(&dir, &trace, &qos).unwrap();
    println!("\nartifacts in {}", files.trace.parent().unwrap().display());

    let answer = report::query(&trace, "A/d0", "A/p1", 120.0).unwrap();
    println!("A/d0 on A/p1 at t=120: {:.3} ({})", answer.value, answer.verdict());
}
