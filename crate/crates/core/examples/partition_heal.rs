//! A partition cuts two detectors off from every process, then heals.

use clusterfd::metrics::{RunView, Transition};
use clusterfd::{scenario, simnet};

fn main() {
    let s = scenario::bundled("partition_heal").unwrap();
    let trace = simnet::run(&s);
    let view = RunView::new(&trace, &s.pattern).unwrap();
    for ((q, p), log) in view.transitions().iter() {
        if log.is_empty() {
            continue;
        }
        let steps: Vec<String> = log
            .iter()
            .map(|(t, tr)| format!("{}@{:.1}", if *tr == Transition::Suspect { "S" } else { "T" }, t.as_f64()))
            .collect();
        println!("{q} -> {p}: {}", steps.join(" "));
    }
    let verdict = view.check_diamond_p();
    println!("stable again from t={:?}", verdict.accuracy.stabilized_at);
}
