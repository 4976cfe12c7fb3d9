//! Short silences of a live process, with and without gossip.

use clusterfd::metrics::QosReport;
use clusterfd::{scenario, simnet};

fn main() {
    let base = scenario::bundled("transient_load").unwrap();
    println!("{:>4} {:>12} {:>12} {:>8}", "seed", "T_M on", "T_M off", "mistakes");
    for seed in 1..=5 {
        let tm = |gossip: bool| {
            let s = base.with_seed(seed).with_gossip(gossip);
            let r = QosReport::compute(&s, &simnet::run(&s));
            (r.mistake_duration.mean.unwrap_or(0.0), r.mistake_duration.count)
        };
        let (on, n_on) = tm(true);
        let (off, n_off) = tm(false);
        println!("{seed:>4} {on:>12.4} {off:>12.4} {n_on:>3}/{n_off:<3}");
    }
}
