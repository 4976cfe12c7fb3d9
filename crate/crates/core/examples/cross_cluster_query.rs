//! Queries about processes of another cluster, relayed through its border.

use clusterfd::simnet::{self, TraceKind};
use clusterfd::{cluster, scenario};

fn main() {
    let s = scenario::bundled("cross_cluster_query").unwrap();
    let trace = simnet::run(&s);
    for r in trace.records() {
        match r.kind {
            TraceKind::QueryIssue => println!(
                "t={:>8.3} {} asks about {}",
                r.time.as_f64(),
                r.actor.as_ref().unwrap(),
                r.subject.as_ref().unwrap()
            ),
            TraceKind::QueryResult => println!(
                "t={:>8.3}   {} by {}: {}",
                r.time.as_f64(),
                r.detail_field("outcome").unwrap(),
                r.detail_field("answered_by").unwrap_or("-"),
                r.value.map_or("-".into(), |v| format!("{v:.3}"))
            ),
            _ => {}
        }
    }
    println!("inter-cluster messages: {}", cluster::inter_cluster_traffic_count(&trace));
}
