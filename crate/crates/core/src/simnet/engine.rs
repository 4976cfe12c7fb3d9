use std::collections::{BTreeMap, BTreeSet};

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::{RandomStream, Trace, TraceKind};
use crate::cluster::RequestId;
use crate::detector::{Action, DetectorState, Input, Message, Note, Timer};
use crate::model::{DetectorId, NodeId, ProcessId, SimTime};
use crate::scenario::{NetworkFault, Scenario, Selector};

#[derive(Debug)]
enum EventKind {
    HeartbeatSend(ProcessId),
    Deliver { msg: u64, from: NodeId, to: NodeId, message: Message },
    TimerFire { detector: DetectorId, timer: Timer },
    Crash(ProcessId),
    TransientStart(ProcessId),
    TransientEnd(ProcessId),
    LinkDown { from: NodeId, to: NodeId },
    LinkUp { from: NodeId, to: NodeId },
    PartitionStart(usize),
    PartitionEnd(usize),
    QueryIssue(usize),
    Sample,
}

impl EventKind {
    /// The node whose step this event is, for δ spacing.
    fn actor(&self) -> Option<NodeId> {
        match self {
            EventKind::HeartbeatSend(p) => Some(p.clone().into()),
            EventKind::Deliver { to, .. } => Some(to.clone()),
            EventKind::TimerFire { detector, .. } => Some(detector.clone().into()),
            _ => None,
        }
    }
}

struct Partition {
    side_a: Vec<Selector>,
    side_b: Vec<Selector>,
}

impl Partition {
    fn separates(&self, x: &NodeId, y: &NodeId) -> bool {
        let in_a = |n: &NodeId| self.side_a.iter().any(|s| s.matches(n));
        let in_b = |n: &NodeId| self.side_b.iter().any(|s| s.matches(n));
        (in_a(x) && in_b(y)) || (in_b(x) && in_a(y))
    }
}

struct Sim<'a> {
    scenario: &'a Scenario,
    streams: RandomStream,
    now: SimTime,
    next_seq: u64,
    queue: BTreeMap<(SimTime, u64), EventKind>,
    last_step: BTreeMap<NodeId, SimTime>,
    detectors: BTreeMap<DetectorId, DetectorState>,
    heartbeat_seq: BTreeMap<ProcessId, u64>,
    process_rng: BTreeMap<ProcessId, ChaCha8Rng>,
    link_rng: BTreeMap<(NodeId, NodeId), ChaCha8Rng>,
    links_down: BTreeMap<(NodeId, NodeId), u32>,
    partitions: Vec<Partition>,
    active_partitions: BTreeSet<usize>,
    next_msg: u64,
    trace: Trace,
}

/// Executes a scenario up to its horizon and returns the full trace.
pub fn run(scenario: &Scenario) -> Trace {
    let mut sim = Sim::new(scenario);
    sim.schedule_initial();
    sim.event_loop();
    sim.trace
}

impl<'a> Sim<'a> {
    fn new(scenario: &'a Scenario) -> Self {
        let streams = RandomStream::new(scenario.seed);
        let mut detectors = BTreeMap::new();
        for d in scenario.topology.detectors() {
            let params = scenario.params_for(&d.cluster).clone();
            let state = DetectorState::new(
                d.clone(),
                params,
                scenario.topology.monitored_by(d),
                scenario.topology.registry(),
                streams.substream(&format!("detector/{d}")),
                SimTime::ZERO,
            )
            .with_gossip(scenario.gossip);
            detectors.insert(d.clone(), state);
        }
        let partitions = scenario
            .network_faults
            .iter()
            .filter_map(|f| match f {
                NetworkFault::Partition { side_a, side_b, .. } => {
                    Some(Partition { side_a: side_a.clone(), side_b: side_b.clone() })
                }
                _ => None,
            })
            .collect();
        Sim {
            scenario,
            streams,
            now: SimTime::ZERO,
            next_seq: 0,
            queue: BTreeMap::new(),
            last_step: BTreeMap::new(),
            detectors,
            heartbeat_seq: BTreeMap::new(),
            process_rng: BTreeMap::new(),
            link_rng: BTreeMap::new(),
            links_down: BTreeMap::new(),
            partitions,
            active_partitions: BTreeSet::new(),
            next_msg: 0,
            trace: Trace::new(),
        }
    }

    fn schedule(&mut self, at: SimTime, kind: EventKind) {
        let at = at.max(self.now);
        self.queue.insert((at, self.next_seq), kind);
        self.next_seq += 1;
    }

    fn record(
        &mut self,
        kind: TraceKind,
        actor: Option<NodeId>,
        subject: Option<NodeId>,
        value: Option<f64>,
        detail: String,
    ) {
        self.trace.push(self.now, kind, actor, subject, value, detail);
    }

    fn schedule_initial(&mut self) {
        let s = self.scenario;
        self.record(
            TraceKind::Scenario,
            None,
            None,
            None,
            format!(
                "name={};horizon={};cadence={};seed={};gossip={};delta={}",
                s.name(),
                s.horizon,
                s.cadence,
                s.seed,
                s.gossip,
                s.delta
            ),
        );
        for c in s.topology.clusters().keys() {
            self.record(TraceKind::Threshold, None, None, Some(s.metrics_threshold(c)), format!("cluster={c}"));
        }

        // sampling grid: k * cadence for every k with k * cadence < horizon
        let cadence = s.cadence.as_f64();
        let mut k = 0u64;
        loop {
            let t = k as f64 * cadence;
            if t >= s.horizon.as_f64() {
                break;
            }
            self.schedule(SimTime::from_f64(t), EventKind::Sample);
            k += 1;
        }

        for (i, f) in s.network_faults.iter().enumerate() {
            match f {
                NetworkFault::LinkDown { from, to, at, until, both_ways } => {
                    let mut pairs = vec![(from.clone(), to.clone())];
                    if *both_ways {
                        pairs.push((to.clone(), from.clone()));
                    }
                    for (a, b) in pairs {
                        self.schedule(*at, EventKind::LinkDown { from: a.clone(), to: b.clone() });
                        if let Some(u) = until {
                            self.schedule(*u, EventKind::LinkUp { from: a, to: b });
                        }
                    }
                }
                NetworkFault::Partition { start, end, .. } => {
                    let idx =
                        s.network_faults[..i].iter().filter(|f| matches!(f, NetworkFault::Partition { .. })).count();
                    self.schedule(*start, EventKind::PartitionStart(idx));
                    if let Some(e) = end {
                        self.schedule(*e, EventKind::PartitionEnd(idx));
                    }
                }
            }
        }
        for p in s.pattern.processes().clone() {
            if let Some(at) = s.pattern.crash_time(&p) {
                self.schedule(at, EventKind::Crash(p.clone()));
            }
            for &(start, end) in s.pattern.transient_intervals(&p) {
                self.schedule(start, EventKind::TransientStart(p.clone()));
                self.schedule(end, EventKind::TransientEnd(p.clone()));
            }
        }
        for (i, q) in s.queries.iter().enumerate() {
            self.schedule(q.at, EventKind::QueryIssue(i));
        }

        // processes start heartbeating at a random phase within one period
        for p in s.topology.processes() {
            let mut rng = self.streams.substream(&format!("process/{p}"));
            let period = s.params_for(&p.cluster).heartbeat_period.as_f64();
            let phase = rng.random::<f64>() * period;
            self.process_rng.insert(p.clone(), rng);
            self.schedule(SimTime::from_f64(phase), EventKind::HeartbeatSend(p.clone()));
        }

        let ids: Vec<DetectorId> = self.detectors.keys().cloned().collect();
        for d in ids {
            let gossip_period = s.params_for(&d.cluster).gossip_period.as_f64();
            let first = self.streams.substream(&format!("phase/{d}")).random::<f64>() * gossip_period;
            let actions = self.detectors.get_mut(&d).expect("known").start(SimTime::ZERO, SimTime::from_f64(first));
            self.apply(&d, actions);
        }
    }

    fn event_loop(&mut self) {
        let horizon = self.scenario.horizon;
        let delta = self.scenario.delta;
        while let Some(((at, seq), event)) = self.queue.pop_first() {
            if at >= horizon {
                self.queue.insert((at, seq), event);
                break;
            }
            self.now = at;
            if let Some(actor) = event.actor() {
                match self.last_step.get(&actor) {
                    Some(&last) if at < last + delta => {
                        self.schedule(last + delta, event);
                        continue;
                    }
                    _ => {
                        self.last_step.insert(actor, at);
                    }
                }
            }
            self.dispatch(event);
        }
        // whatever is still in flight never arrives
        self.now = horizon;
        let pending = std::mem::take(&mut self.queue);
        for (_, event) in pending {
            if let EventKind::Deliver { msg, from, to, message } = event {
                self.record(
                    TraceKind::Drop,
                    Some(from),
                    Some(to),
                    None,
                    format!("msg={msg};type={};reason=horizon", message.label()),
                );
            }
        }
    }

    fn dispatch(&mut self, event: EventKind) {
        match event {
            EventKind::Sample => self.sample(),
            EventKind::HeartbeatSend(p) => self.heartbeat(p),
            EventKind::Deliver { msg, from, to, message } => self.deliver(msg, from, to, message),
            EventKind::TimerFire { detector, timer } => {
                let now = self.now;
                let actions = self.detectors.get_mut(&detector).expect("known").handle(now, Input::Timer(timer));
                self.apply(&detector, actions);
            }
            EventKind::Crash(p) => self.record(TraceKind::Crash, Some(p.into()), None, None, String::new()),
            EventKind::TransientStart(p) => {
                self.record(TraceKind::TransientStart, Some(p.into()), None, None, String::new())
            }
            EventKind::TransientEnd(p) => {
                self.record(TraceKind::TransientEnd, Some(p.into()), None, None, String::new())
            }
            EventKind::LinkDown { from, to } => {
                *self.links_down.entry((from.clone(), to.clone())).or_insert(0) += 1;
                self.record(TraceKind::LinkDown, Some(from), Some(to), None, String::new());
            }
            EventKind::LinkUp { from, to } => {
                if let Some(n) = self.links_down.get_mut(&(from.clone(), to.clone())) {
                    *n -= 1;
                    if *n == 0 {
                        self.links_down.remove(&(from.clone(), to.clone()));
                    }
                }
                self.record(TraceKind::LinkUp, Some(from), Some(to), None, String::new());
            }
            EventKind::PartitionStart(i) => {
                self.active_partitions.insert(i);
                self.record(TraceKind::PartitionStart, None, None, None, format!("partition={i}"));
            }
            EventKind::PartitionEnd(i) => {
                self.active_partitions.remove(&i);
                self.record(TraceKind::PartitionEnd, None, None, None, format!("partition={i}"));
            }
            EventKind::QueryIssue(i) => {
                let q = &self.scenario.queries[i];
                let (origin, subject) = (q.origin.clone(), q.subject.clone());
                self.record(
                    TraceKind::QueryIssue,
                    Some(origin.clone().into()),
                    Some(subject.clone().into()),
                    None,
                    format!("request={i}"),
                );
                let now = self.now;
                let actions = self
                    .detectors
                    .get_mut(&origin)
                    .expect("validated origin")
                    .handle(now, Input::IssueQuery { request_id: RequestId(i as u64), subject });
                self.apply(&origin, actions);
            }
        }
    }

    fn sample(&mut self) {
        let now = self.now;
        let mut rows = Vec::new();
        for (d, state) in &self.detectors {
            for p in state.monitored() {
                let (effective, local) = state.sample(&p, now).expect("monitored");
                rows.push((d.clone(), p, effective, local));
            }
        }
        for (d, p, effective, local) in rows {
            self.trace
                .push(now, TraceKind::Sample, Some(d.into()), Some(p.into()), Some(effective), String::new())
                .local = Some(local);
        }
    }

    fn heartbeat(&mut self, p: ProcessId) {
        let s = self.scenario;
        if s.pattern.has_failed(&p, self.now) {
            return;
        }
        if !s.pattern.is_silent(&p, self.now) {
            let seq = {
                let n = self.heartbeat_seq.entry(p.clone()).or_insert(0);
                *n += 1;
                *n
            };
            self.record(TraceKind::HeartbeatSend, Some(p.clone().into()), None, None, format!("seq={seq}"));
            for d in s.topology.monitors_of(&p) {
                self.transmit(p.clone().into(), d.into(), Message::Heartbeat { from: p.clone(), seq });
            }
        }
        let period = s.params_for(&p.cluster).heartbeat_period.as_f64();
        let jitter = s.heartbeat_jitter;
        let rng = self.process_rng.get_mut(&p).expect("known process");
        let offset = if jitter > 0.0 { jitter * (2.0 * rng.random::<f64>() - 1.0) } else { 0.0 };
        let next = self.now + (period + offset).max(s.delta.as_f64());
        self.schedule(next, EventKind::HeartbeatSend(p));
    }

    fn transmit(&mut self, from: NodeId, to: NodeId, message: Message) {
        let msg = self.next_msg;
        self.next_msg += 1;
        let link = self.scenario.network.link(&from, &to);
        let streams = self.streams;
        let rng = self
            .link_rng
            .entry((from.clone(), to.clone()))
            .or_insert_with(|| streams.substream(&format!("link/{from}->{to}")));
        let fate = link.transmit(rng);
        let value = match &message {
            Message::Gossip(g) => Some(g.suspicion),
            _ => None,
        };
        let label = message.label();
        self.record(TraceKind::Send, Some(from.clone()), Some(to.clone()), value, format!("msg={msg};type={label}"));
        match fate {
            None => {
                self.record(TraceKind::Drop, Some(from), Some(to), None, format!("msg={msg};type={label};reason=loss"))
            }
            Some(delay) => {
                let at = self.now + delay;
                self.schedule(at, EventKind::Deliver { msg, from, to, message });
            }
        }
    }

    fn blocked(&self, from: &NodeId, to: &NodeId) -> Option<&'static str> {
        if self.links_down.contains_key(&(from.clone(), to.clone())) {
            return Some("link_down");
        }
        if self.active_partitions.iter().any(|&i| self.partitions[i].separates(from, to)) {
            return Some("partition");
        }
        None
    }

    fn deliver(&mut self, msg: u64, from: NodeId, to: NodeId, message: Message) {
        let label = message.label();
        if let Some(reason) = self.blocked(&from, &to) {
            self.record(TraceKind::Drop, Some(from), Some(to), None, format!("msg={msg};type={label};reason={reason}"));
            return;
        }
        self.record(TraceKind::Deliver, Some(from.clone()), Some(to.clone()), None, format!("msg={msg};type={label}"));
        let NodeId::Detector(d) = to else {
            return;
        };
        let now = self.now;
        let actions = self.detectors.get_mut(&d).expect("known").handle(now, Input::Deliver { from, message });
        self.apply(&d, actions);
    }

    fn apply(&mut self, d: &DetectorId, actions: Vec<Action>) {
        for action in actions {
            match action {
                Action::Send { to, message } => self.transmit(d.clone().into(), to, message),
                Action::Broadcast { message } => {
                    let peers: Vec<DetectorId> = self
                        .scenario
                        .topology
                        .cluster(&d.cluster)
                        .map(|m| m.detectors.iter().filter(|p| *p != d).cloned().collect())
                        .unwrap_or_default();
                    self.record(
                        TraceKind::Broadcast,
                        Some(d.clone().into()),
                        None,
                        None,
                        format!("type={};recipients={}", message.label(), peers.len()),
                    );
                    for peer in peers {
                        self.transmit(d.clone().into(), peer.into(), message.clone());
                    }
                }
                Action::Arm { at, timer } => self.schedule(at, EventKind::TimerFire { detector: d.clone(), timer }),
                Action::Note(note) => self.note(d, note),
            }
        }
    }

    fn note(&mut self, d: &DetectorId, note: Note) {
        let actor = Some(NodeId::from(d.clone()));
        match note {
            Note::CrossedUp { subject, effective, local } => {
                self.trace
                    .push(self.now, TraceKind::CrossUp, actor, Some(subject.into()), Some(effective), String::new())
                    .local = Some(local);
            }
            Note::CrossedDown { subject, effective, local } => {
                self.trace
                    .push(self.now, TraceKind::CrossDown, actor, Some(subject.into()), Some(effective), String::new())
                    .local = Some(local);
            }
            Note::Frozen { subject, value, deadline } => {
                self.record(TraceKind::Freeze, actor, Some(subject.into()), Some(value), format!("deadline={deadline}"))
            }
            Note::Unfrozen { subject, reason } => self.record(
                TraceKind::Unfreeze,
                actor,
                Some(subject.into()),
                None,
                format!("reason={}", reason.label()),
            ),
            Note::HeartbeatRejected { subject, seq } => {
                self.record(TraceKind::HeartbeatRejected, actor, Some(subject.into()), None, format!("seq={seq}"))
            }
            Note::Isolated { subject } => {
                self.record(TraceKind::Isolated, actor, Some(subject.into()), None, String::new())
            }
            Note::GossipIgnored { subject, from } => {
                self.record(TraceKind::GossipIgnored, actor, Some(subject.into()), None, format!("from={from}"))
            }
            Note::PeerJoined { peer } => {
                self.record(TraceKind::PeerJoined, actor, Some(peer.into()), None, String::new())
            }
            Note::PeerEvicted { peer } => {
                self.record(TraceKind::PeerEvicted, actor, Some(peer.into()), None, String::new())
            }
            Note::QueryResolved { request_id, subject, outcome } => {
                let value = match &outcome {
                    crate::cluster::QueryOutcome::Value { value, .. } => Some(*value),
                    _ => None,
                };
                let mut detail = format!("request={};outcome={}", request_id.0, outcome.label());
                if let crate::cluster::QueryOutcome::Value { answered_by, .. } = &outcome {
                    detail.push_str(&format!(";answered_by={answered_by}"));
                }
                self.record(TraceKind::QueryResult, actor, Some(subject.into()), value, detail);
            }
            Note::LateResponse { request_id } => {
                self.record(TraceKind::LateResponse, actor, None, None, format!("request={}", request_id.0))
            }
        }
    }
}
