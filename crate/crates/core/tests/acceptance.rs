//! Acceptance criteria. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any fails.

use std::collections::BTreeMap;
use std::process::ExitCode;
use std::thread;

use clusterfd::accrual::{contribution, SuspicionEntry};
use clusterfd::metrics::{self, DetectionTime, IntervalBreakdown, QosReport, RunView};
use clusterfd::model::{DetectorParams, HistorySample, PredictorKind};
use clusterfd::predictors::{ema_step, EmaState, PredictorState};
use clusterfd::scenario::{self, Scenario};
use clusterfd::simnet::{self, RandomStream, Trace, TraceKind};
use clusterfd::{DetectorId, ProcessId, SimTime};
use rand::Rng;
use sha2::{Digest, Sha256};

type Outcome = Result<String, String>;
type Check<'a> = Box<dyn Fn() -> Outcome + 'a>;

fn t(v: f64) -> SimTime {
    SimTime::from_f64(v)
}

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

/// Runs `f` once per seed in 1..=n, in parallel, keeping seed order.
fn per_seed<T: Send>(n: u64, f: impl Fn(u64) -> T + Sync) -> Vec<T> {
    thread::scope(|s| {
        let handles: Vec<_> = (1..=n)
            .map(|seed| {
                let f = &f;
                s.spawn(move || f(seed))
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("worker")).collect()
    })
}

struct BundledRun {
    scenario: Scenario,
    trace: Trace,
}

fn run_bundled() -> BTreeMap<&'static str, (BundledRun, [u8; 32])> {
    thread::scope(|s| {
        let handles: Vec<_> = scenario::BUNDLED
            .iter()
            .map(|(name, _)| {
                s.spawn(move || {
                    let scenario = scenario::bundled(name).expect("bundled scenario");
                    let trace = simnet::run(&scenario);
                    let again: [u8; 32] = Sha256::digest(simnet::run(&scenario).to_jsonl()).into();
                    (*name, (BundledRun { scenario, trace }, again))
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("worker")).collect()
    })
}

fn contribution_exactness() -> Outcome {
    let mut worst: f64 = 0.0;
    for pred in [0.0, 0.5, 3.25, 100.0, 12345.678] {
        let p = t(pred);
        let checks =
            [(contribution(p, p), 0.0), (contribution(t(pred + 9.0), p), 1.0), (contribution(t(pred + 99.0), p), 1.0)];
        for (got, want) in checks {
            worst = worst.max((got - want).abs());
        }
        for x in [1e-9, 0.1, 1.0, 50.0].into_iter().filter(|&x| x <= pred) {
            worst = worst.max(contribution(t(pred - x), p).abs());
        }
    }
    ensure(worst <= 1e-12, || format!("max error {worst:e}"))?;
    Ok(format!("max error {worst:e}"))
}

fn oracle_mean(xs: &[f64]) -> f64 {
    let mut s = 0.0;
    for x in xs {
        s += x;
    }
    s / xs.len() as f64
}

fn oracle_wma(xs: &[f64]) -> f64 {
    let mut num = 0.0;
    let mut den = 0.0;
    for (i, x) in xs.iter().enumerate() {
        let w = (i + 1) as f64;
        num += w * x;
        den += w;
    }
    num / den
}

fn oracle_ema(all: &[f64], alpha: f64, warmup: usize) -> Option<f64> {
    if all.len() < warmup {
        return None;
    }
    let mut s = oracle_mean(&all[..warmup]);
    for x in &all[warmup..] {
        s = alpha * x + (1.0 - alpha) * s;
    }
    Some(s)
}

fn predictor_oracles() -> Outcome {
    let wma = clusterfd::predictors::predict_wma(&[1.0, 2.0, 3.0, 4.0, 5.0]).map_err(|e| e.to_string())?;
    ensure((wma - 55.0 / 15.0).abs() <= 1e-12, || format!("WMA [1..5] = {wma}"))?;
    let ema = ema_step(&EmaState::initialized(0.5, 1, 4.0), 8.0).value();
    ensure(ema == Some(6.0), || format!("EMA step = {ema:?}"))?;

    let mut rng = RandomStream::new(7).substream("predictor-oracles");
    let mut worst: f64 = 0.0;
    let mut checked = 0usize;
    for _ in 0..10_000 {
        let window = rng.random_range(2..=16usize);
        let alpha = rng.random_range(0.05..0.95);
        let len = rng.random_range(1..=120usize);
        let scale = rng.random_range(0.01..10.0);
        let stream: Vec<f64> = (0..len).map(|_| scale * rng.random_range(0.05..3.0)).collect();
        let mut states: Vec<PredictorState> =
            [PredictorKind::Sma, PredictorKind::RestrictedMa, PredictorKind::Wma, PredictorKind::Ema]
                .into_iter()
                .map(|k| PredictorState::new(k, window, alpha))
                .collect();
        for (i, &x) in stream.iter().enumerate() {
            for s in &mut states {
                s.observe_interarrival(x);
            }
            let seen = &stream[..=i];
            let tail = &seen[seen.len().saturating_sub(window)..];
            let mean = oracle_mean(tail);
            let last = *tail.last().unwrap();
            let expected = [
                mean,
                if mean > last { last } else { mean },
                oracle_wma(tail),
                oracle_ema(seen, alpha, window).unwrap_or(mean),
            ];
            for (s, want) in states.iter().zip(expected) {
                let got = s.predict().ok_or("no prediction after a sample")?;
                worst = worst.max((got - want).abs());
                checked += 1;
            }
        }
    }
    ensure(worst <= 1e-9, || format!("max deviation {worst:e}"))?;
    Ok(format!("{checked} forecasts over 10000 streams, max deviation {worst:e}"))
}

fn accruement(runs: &BTreeMap<&str, (BundledRun, [u8; 32])>) -> Outcome {
    let run = &runs["crash"].0;
    let local = run.trace.local_history();
    let mut pairs = 0;
    for p in run.scenario.pattern.faulty_set() {
        let crash = run.scenario.pattern.crash_time(&p).unwrap();
        let period = run.scenario.params_for(&p.cluster).heartbeat_period.as_f64();
        for d in run.scenario.topology.detectors().filter(|d| run.scenario.topology.monitored_by(d).contains(&p)) {
            let last_hb = run
                .trace
                .of_kind(TraceKind::Deliver)
                .filter(|r| {
                    r.actor_process() == Some(&p) && r.subject.as_ref().map(|s| s.to_string()) == Some(d.to_string())
                })
                .filter(|r| r.detail_field("type") == Some("heartbeat"))
                .map(|r| r.time)
                .last()
                .ok_or_else(|| format!("{d} never heard from {p}"))?;
            let after: Vec<&HistorySample> = local.series(d, &p).iter().filter(|s| s.time >= last_hb).collect();
            for w in after.windows(2) {
                ensure(w[1].value >= w[0].value, || {
                    format!("{d} -> {p}: local fell from {} to {} at {}", w[0].value, w[1].value, w[1].time)
                })?;
            }
            let (first, last) = (after.first().unwrap(), after.last().unwrap());
            let elapsed = last.time.since(crash);
            ensure(last.value - first.value >= 0.5 * elapsed / period, || {
                format!("{d} -> {p}: local only reached {} after {elapsed}", last.value)
            })?;
            pairs += 1;
        }
    }
    ensure(pairs > 0, || "no crashed pairs".into())?;
    Ok(format!("{pairs} detector/crashed-process pairs monotone after their last heartbeat"))
}

fn upper_bound() -> Outcome {
    let (delay, jitter, period): (f64, f64, f64) = (0.25, 0.2, 1.0);
    let max_delay = delay + jitter;
    let bound = ((max_delay + period) / period).ceil() + 1.0;
    let text = format!(
        "name = \"bounded\"\nhorizon = 10000.5\nseed = 3\ncadence = 0.05\n\
         [link]\ndelay = {delay}\njitter = {jitter}\n\
         [[clusters]]\nname = \"A\"\nprocesses = 1\ndetectors = 2\n[clusters.detector]\nheartbeat_period = {period}\n"
    );
    let s = scenario::validate(&text).map_err(|e| e.to_string())?;
    let trace = simnet::run(&s);
    let beats = trace.of_kind(TraceKind::HeartbeatSend).count();
    ensure(beats >= 10_000, || format!("only {beats} heartbeats"))?;
    ensure(trace.of_kind(TraceKind::Drop).all(|r| r.detail_field("reason") == Some("horizon")), || "lossy run".into())?;
    let max_sim = trace.local_history().iter().flat_map(|(_, xs)| xs.iter().map(|s| s.value)).fold(0.0, f64::max);

    // drive one entry directly and look just before each arrival, where the level peaks
    let mut rng = RandomStream::new(11).substream("bound");
    let mut max_direct: f64 = 0.0;
    for kind in [PredictorKind::Sma, PredictorKind::RestrictedMa, PredictorKind::Wma, PredictorKind::Ema] {
        let params = DetectorParams { predictor: kind, ..DetectorParams::with_period(period) };
        let p = ProcessId::new(&clusterfd::ClusterId::new("A"), 0);
        let mut entry = SuspicionEntry::new(p, &params, SimTime::ZERO);
        let mut last = 0.0;
        for k in 1..=10_000u64 {
            let arrival = (k as f64 * period + rng.random_range(delay - jitter..=max_delay)).max(last + 1e-6);
            let just_before = t(arrival - 1e-9);
            entry.advance(just_before);
            max_direct = max_direct.max(entry.local_suspicion(just_before));
            entry.on_heartbeat(t(arrival), k).map_err(|e| e.to_string())?;
            last = arrival;
        }
    }
    ensure(max_sim <= bound && max_direct <= bound, || {
        format!("max {max_sim:.4} (simulated) / {max_direct:.4} (direct) exceeds {bound}")
    })?;
    Ok(format!("{beats} heartbeats, max {max_sim:.4} simulated, {max_direct:.4} direct, bound {bound}"))
}

fn completeness(runs: &BTreeMap<&str, (BundledRun, [u8; 32])>) -> Outcome {
    let run = &runs["crash"].0;
    let view = RunView::new(&run.trace, &run.scenario.pattern).map_err(|e| e.to_string())?;
    let verdict = view.check_diamond_p();
    ensure(verdict.completeness.holds, || format!("undetected {:?}", verdict.completeness.undetected))?;
    let mut times = Vec::new();
    for p in run.scenario.pattern.faulty_set() {
        for d in run.scenario.topology.cluster(&p.cluster).unwrap().detectors.iter() {
            match view.detection_time(d, &p).map_err(|e| e.to_string())? {
                DetectionTime::Detected(v) if v.is_finite() => times.push(v),
                other => return Err(format!("{d} -> {p}: {other:?}")),
            }
        }
    }
    let report = QosReport::compute(&run.scenario, &run.trace);
    ensure(report.detection_time.mean.is_some_and(f64::is_finite), || "T_D not reported".into())?;
    Ok(format!("{} pairs detected, T_D mean {:.3}", times.len(), report.detection_time.mean.unwrap()))
}

fn eventual_accuracy(runs: &BTreeMap<&str, (BundledRun, [u8; 32])>) -> Outcome {
    let run = &runs["no_fault"].0;
    let view = RunView::new(&run.trace, &run.scenario.pattern).map_err(|e| e.to_string())?;
    let verdict = view.check_diamond_p();
    let stable = verdict.accuracy.stabilized_at.ok_or("never stabilized")?;
    let history = run.trace.history();
    let mut after = 0usize;
    let mut trusted = 0usize;
    for ((_, p), samples) in history.iter() {
        let threshold = run.scenario.metrics_threshold(&p.cluster);
        for s in samples.iter().filter(|s| s.time.as_f64() >= stable) {
            after += 1;
            trusted += usize::from(s.value < threshold);
        }
        let late_suspicions = metrics::transitions(samples, threshold)
            .into_iter()
            .filter(|(at, kind)| at.as_f64() >= stable && *kind == metrics::Transition::Suspect)
            .count();
        ensure(late_suspicions == 0, || format!("suspicion of {p} after {stable}"))?;
    }
    let pa = trusted as f64 / after as f64;
    ensure(after > 0 && pa == 1.0, || format!("P_A {pa} over {after} samples"))?;
    Ok(format!("stable from t={stable}, P_A {pa} over {after} samples"))
}

fn isolated_detector_recovers() -> Outcome {
    let base = scenario::bundled("link_failure").ok_or("missing scenario")?;
    let d0: DetectorId = "A/d0".parse().map_err(|_| "bad id")?;
    let p0: ProcessId = "A/p0".parse().map_err(|_| "bad id")?;
    let link = base.network.link(&d0.clone().into(), &"A/d1".parse().unwrap());
    let back = base.network.link(&"A/d1".parse().unwrap(), &d0.clone().into());
    let allowance = link.base_delay + link.jitter + back.base_delay + back.jitter + base.delta.as_f64() + 1e-9;
    let threshold = base.params_for(&p0.cluster).threshold;
    let down_at = 60.0;

    let results = per_seed(20, |seed| -> Result<(f64, usize), String> {
        let crossings = |trace: &Trace| -> Vec<(f64, bool)> {
            trace
                .records()
                .iter()
                .filter(|r| matches!(r.kind, TraceKind::CrossUp | TraceKind::CrossDown))
                .filter(|r| r.actor_detector() == Some(&d0) && r.subject_process() == Some(&p0))
                .map(|r| (r.time.as_f64(), r.kind == TraceKind::CrossUp))
                .collect()
        };

        let on = simnet::run(&base.with_seed(seed).with_gossip(true));
        let on_x = crossings(&on);
        let mut slowest: f64 = 0.0;
        let mut ups = 0;
        for (i, &(at, up)) in on_x.iter().enumerate() {
            if !up || at < down_at {
                continue;
            }
            ups += 1;
            let down = on_x.get(i + 1).filter(|(_, u)| !u).ok_or(format!("seed {seed}: on, no recovery after {at}"))?;
            slowest = slowest.max(down.0 - at);
        }
        ensure(slowest <= allowance, || format!("seed {seed}: on, recovery took {slowest:.4} > {allowance:.4}"))?;
        ensure(ups > 0 || on_x.last().is_none_or(|x| !x.1), || format!("seed {seed}: on, ends suspected"))?;

        let off = simnet::run(&base.with_seed(seed).with_gossip(false));
        let off_x = crossings(&off);
        let &(last_up, up) = off_x.last().ok_or(format!("seed {seed}: off, never crossed"))?;
        ensure(up && last_up >= down_at, || format!("seed {seed}: off, does not end suspected"))?;
        let history = off.history();
        let tail_ok =
            history.series(&d0, &p0).iter().filter(|s| s.time.as_f64() > last_up).all(|s| s.value >= threshold);
        ensure(tail_ok, || format!("seed {seed}: off, dips below threshold after {last_up}"))?;
        Ok((slowest, ups))
    });
    let mut slowest: f64 = 0.0;
    let mut episodes = 0;
    for r in results {
        let (s, n) = r?;
        slowest = slowest.max(s);
        episodes += n;
    }
    Ok(format!(
        "flip on 20/20 seeds, {episodes} gossip-on crossings, slowest recovery {slowest:.4} (allowed {allowance:.4})"
    ))
}

fn transient_recovery() -> Outcome {
    let base = scenario::bundled("transient_load").ok_or("missing scenario")?;
    let rows = per_seed(20, |seed| {
        let tm = |gossip: bool| {
            let s = base.with_seed(seed).with_gossip(gossip);
            let r = QosReport::compute(&s, &simnet::run(&s));
            r.mistake_duration.mean.unwrap_or(0.0)
        };
        (tm(true), tm(false))
    });
    let n = rows.len() as f64;
    let mean_on = rows.iter().map(|r| r.0).sum::<f64>() / n;
    let mean_off = rows.iter().map(|r| r.1).sum::<f64>() / n;
    let strict = rows.iter().filter(|r| r.0 < r.1).count();
    let detail = format!("mean T_M {mean_on:.4} on vs {mean_off:.4} off, strictly better on {strict}/20 seeds");
    ensure(mean_on <= mean_off && strict >= 16, || detail.clone())?;
    Ok(detail)
}

fn gossip_scalability(runs: &BTreeMap<&str, (BundledRun, [u8; 32])>) -> Outcome {
    let rates: Vec<(&str, f64)> = ["scaling_10", "scaling_50", "scaling_100"]
        .into_iter()
        .map(|n| {
            let run = &runs[n].0;
            (n, QosReport::compute(&run.scenario, &run.trace).traffic.gossip_rate_per_detector)
        })
        .collect();
    let lo = rates.iter().map(|r| r.1).fold(f64::INFINITY, f64::min);
    let hi = rates.iter().map(|r| r.1).fold(0.0, f64::max);
    let spread = (hi - lo) / lo;
    let detail = rates.iter().map(|(n, r)| format!("{n} {r:.4}")).collect::<Vec<_>>().join(", ");
    ensure(lo > 0.0 && spread < 0.10, || format!("{detail}; spread {:.1}%", spread * 100.0))?;
    Ok(format!("{detail}; spread {:.1}%", spread * 100.0))
}

fn propagation_on_request(runs: &BTreeMap<&str, (BundledRun, [u8; 32])>) -> Outcome {
    let inter = |name: &str| clusterfd::cluster::inter_cluster_traffic_count(&runs[name].0.trace);
    for name in ["crash", "transient_load"] {
        ensure(runs[name].0.scenario.queries.is_empty(), || format!("{name} schedules queries"))?;
        ensure(inter(name) == 0, || format!("{name}: {} inter-cluster messages", inter(name)))?;
    }
    let queries = runs["cross_cluster_query"].0.scenario.queries.len();
    let n = inter("cross_cluster_query");
    ensure(queries > 0 && (2 * queries..=4 * queries).contains(&n), || format!("{n} messages for {queries} queries"))?;
    Ok(format!("0 in crash and transient_load, {n} for {queries} queries"))
}

fn determinism(runs: &BTreeMap<&str, (BundledRun, [u8; 32])>) -> Outcome {
    for (name, (run, again)) in runs {
        let first: [u8; 32] = Sha256::digest(run.trace.to_jsonl()).into();
        ensure(&first == again, || format!("{name}: traces differ"))?;
    }
    Ok(format!("{} bundled scenarios hash-identical across two runs", runs.len()))
}

fn partition_check(runs: &BTreeMap<&str, (BundledRun, [u8; 32])>) -> Outcome {
    let mut pairs = 0;
    let mut worst: f64 = 0.0;
    for (name, (run, _)) in runs {
        let horizon = run.scenario.horizon;
        let cadence = run.scenario.cadence.as_f64();
        for ((_, p), samples) in run.trace.history().iter() {
            let threshold = run.scenario.metrics_threshold(&p.cluster);
            let b = IntervalBreakdown::compute(samples, threshold, run.scenario.pattern.crash_time(p), horizon);
            let err = (b.total() - horizon.as_f64()).abs();
            ensure(err <= cadence, || format!("{name} {p}: total {} vs horizon {horizon}", b.total()))?;
            worst = worst.max(err / cadence);
            pairs += 1;
        }
    }
    Ok(format!("{pairs} pairs, worst gap {worst:.2e} cadences"))
}

fn main() -> ExitCode {
    let runs = run_bundled();
    let criteria: Vec<(&str, Check)> = vec![
        ("contribution exactness", Box::new(contribution_exactness)),
        ("predictor oracle equivalence", Box::new(predictor_oracles)),
        ("accruement after a crash", Box::new(|| accruement(&runs))),
        ("bounded suspicion of a correct process", Box::new(upper_bound)),
        ("strong completeness", Box::new(|| completeness(&runs))),
        ("eventual strong accuracy", Box::new(|| eventual_accuracy(&runs))),
        ("isolated detector recovers through gossip", Box::new(isolated_detector_recovers)),
        ("transient load recovery", Box::new(transient_recovery)),
        ("gossip rate independent of cluster size", Box::new(|| gossip_scalability(&runs))),
        ("cross-cluster traffic only on request", Box::new(|| propagation_on_request(&runs))),
        ("deterministic traces", Box::new(|| determinism(&runs))),
        ("per-pair time partition", Box::new(|| partition_check(&runs))),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        match check() {
            Ok(detail) => println!("PASS {:>2} {name}: {detail}", i + 1),
            Err(detail) => {
                failed += 1;
                println!("FAIL {:>2} {name}: {detail}", i + 1);
            }
        }
    }
    println!("{}/{} criteria passed", criteria.len() - failed, criteria.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
