//! One failure detection service as a sequential state machine.
//!
//! The detector never touches a clock or a socket. Each call to
//! [`DetectorState::handle`] feeds one input (heartbeat, message, timer) at
//! one instant and returns the actions to perform: messages to send, timers
//! to arm and notable events for the audit trail.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::accrual::{AccrualError, SuspicionEntry};
use crate::cluster::{BorderRegistry, CrossClusterRequest, QueryOutcome, QueryResponse, RequestId};
use crate::gossip::{GossipKind, GossipMessage, MembershipDigest, MembershipView, PeerSampler, UniformSampler};
use crate::model::{DetectorId, DetectorParams, NodeId, ProcessId, SimTime};

/// Everything that travels over the simulated network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Message {
    Heartbeat { from: ProcessId, seq: u64 },
    Gossip(GossipMessage),
    Membership(Arc<MembershipDigest>),
    QueryRequest(CrossClusterRequest),
    QueryResponse(QueryResponse),
}

impl Message {
    pub fn label(&self) -> &'static str {
        match self {
            Message::Heartbeat { .. } => "heartbeat",
            Message::Gossip(g) => g.kind.label(),
            Message::Membership(_) => "membership",
            Message::QueryRequest(_) => "query_request",
            Message::QueryResponse(_) => "query_response",
        }
    }

    /// True for suspicion gossip and membership traffic.
    pub fn is_gossip(&self) -> bool {
        matches!(self, Message::Gossip(_) | Message::Membership(_))
    }
}

/// Timers a detector can arm.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub enum Timer {
    /// Re-evaluate one suspicion entry; stale generations are ignored.
    Wake {
        subject: ProcessId,
        generation: u64,
    },
    Broadcast,
    QueryDeadline(RequestId),
}

/// Inputs a detector reacts to.
#[derive(Debug, Clone, PartialEq)]
pub enum Input {
    Deliver {
        from: NodeId,
        message: Message,
    },
    Timer(Timer),
    /// The local application asks for the suspicion level of `subject`.
    IssueQuery {
        request_id: RequestId,
        subject: ProcessId,
    },
}

/// Side effects requested by the detector.
#[derive(Debug, Clone, PartialEq)]
pub enum Action {
    Send {
        to: NodeId,
        message: Message,
    },
    /// One transmission reaching every other detector of the local cluster.
    Broadcast {
        message: Message,
    },
    Arm {
        at: SimTime,
        timer: Timer,
    },
    Note(Note),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UnfreezeReason {
    Gossip,
    Heartbeat,
    Deadline,
}

impl UnfreezeReason {
    pub fn label(self) -> &'static str {
        match self {
            UnfreezeReason::Gossip => "gossip",
            UnfreezeReason::Heartbeat => "heartbeat",
            UnfreezeReason::Deadline => "deadline",
        }
    }
}

/// Notable state changes, recorded in the trace.
#[derive(Debug, Clone, PartialEq)]
pub enum Note {
    CrossedUp { subject: ProcessId, effective: f64, local: f64 },
    CrossedDown { subject: ProcessId, effective: f64, local: f64 },
    Frozen { subject: ProcessId, value: f64, deadline: SimTime },
    Unfrozen { subject: ProcessId, reason: UnfreezeReason },
    HeartbeatRejected { subject: ProcessId, seq: u64 },
    Isolated { subject: ProcessId },
    GossipIgnored { subject: ProcessId, from: DetectorId },
    PeerJoined { peer: DetectorId },
    PeerEvicted { peer: DetectorId },
    QueryResolved { request_id: RequestId, subject: ProcessId, outcome: QueryOutcome },
    LateResponse { request_id: RequestId },
}

#[derive(Debug, Clone, PartialEq)]
struct Slot {
    entry: SuspicionEntry,
    suspected: bool,
    generation: u64,
    next_probe: Option<SimTime>,
}

#[derive(Debug, Clone, PartialEq)]
struct PendingQuery {
    subject: ProcessId,
    issued_at: SimTime,
}

/// Full state of one detector.
#[derive(Debug)]
pub struct DetectorState {
    id: DetectorId,
    params: DetectorParams,
    gossip: bool,
    slots: BTreeMap<ProcessId, Slot>,
    view: MembershipView,
    digests: BTreeMap<DetectorId, BTreeSet<ProcessId>>,
    registry: BorderRegistry,
    sampler: Box<dyn PeerSampler>,
    rng: ChaCha8Rng,
    pending: BTreeMap<RequestId, PendingQuery>,
    relays: BTreeMap<RequestId, DetectorId>,
}

impl DetectorState {
    pub fn new(
        id: DetectorId,
        params: DetectorParams,
        monitored: impl IntoIterator<Item = ProcessId>,
        registry: BorderRegistry,
        rng: ChaCha8Rng,
        start: SimTime,
    ) -> Self {
        let slots = monitored
            .into_iter()
            .map(|p| {
                let entry = SuspicionEntry::new(p.clone(), &params, start);
                (p, Slot { entry, suspected: false, generation: 0, next_probe: None })
            })
            .collect();
        DetectorState {
            view: MembershipView::new(id.clone()),
            id,
            params,
            gossip: true,
            slots,
            digests: BTreeMap::new(),
            registry,
            sampler: Box::new(UniformSampler),
            rng,
            pending: BTreeMap::new(),
            relays: BTreeMap::new(),
        }
    }

    /// Turns suspicion gossip on or off. Membership broadcasts continue.
    pub fn with_gossip(mut self, enabled: bool) -> Self {
        self.gossip = enabled;
        self
    }

    pub fn with_sampler(mut self, sampler: Box<dyn PeerSampler>) -> Self {
        self.sampler = sampler;
        self
    }

    pub fn with_view(mut self, view: MembershipView) -> Self {
        self.view = view;
        self
    }

    pub fn id(&self) -> &DetectorId {
        &self.id
    }

    pub fn params(&self) -> &DetectorParams {
        &self.params
    }

    pub fn view(&self) -> &MembershipView {
        &self.view
    }

    pub fn monitored(&self) -> BTreeSet<ProcessId> {
        self.slots.keys().cloned().collect()
    }

    pub fn monitors(&self, p: &ProcessId) -> bool {
        self.slots.contains_key(p)
    }

    pub fn entry(&self, p: &ProcessId) -> Option<&SuspicionEntry> {
        self.slots.get(p).map(|s| &s.entry)
    }

    pub fn is_suspected(&self, p: &ProcessId) -> Option<bool> {
        self.slots.get(p).map(|s| s.suspected)
    }

    /// `(effective, local)` suspicion of `p` at `t`, without changing state.
    pub fn sample(&self, p: &ProcessId, t: SimTime) -> Option<(f64, f64)> {
        self.slots.get(p).map(|s| (s.entry.effective_suspicion(t), s.entry.local_suspicion(t)))
    }

    pub fn pending_queries(&self) -> usize {
        self.pending.len()
    }

    /// Initial timers: one wake per entry and the first membership broadcast
    /// at `first_broadcast`.
    pub fn start(&mut self, now: SimTime, first_broadcast: SimTime) -> Vec<Action> {
        let mut out = vec![Action::Arm { at: first_broadcast, timer: Timer::Broadcast }];
        let subjects: Vec<ProcessId> = self.slots.keys().cloned().collect();
        for p in subjects {
            self.reevaluate(&p, now, &mut out);
        }
        out
    }

    pub fn handle(&mut self, now: SimTime, input: Input) -> Vec<Action> {
        let mut out = Vec::new();
        match input {
            Input::Deliver { from, message } => self.on_message(now, from, message, &mut out),
            Input::Timer(Timer::Wake { subject, generation }) => {
                if self.slots.get(&subject).is_some_and(|s| s.generation == generation) {
                    self.reevaluate(&subject, now, &mut out);
                }
            }
            Input::Timer(Timer::Broadcast) => self.periodic_membership_broadcast(now, &mut out),
            Input::Timer(Timer::QueryDeadline(request_id)) => {
                if let Some(q) = self.pending.remove(&request_id) {
                    out.push(Action::Note(Note::QueryResolved {
                        request_id,
                        subject: q.subject,
                        outcome: QueryOutcome::Timeout,
                    }));
                }
            }
            Input::IssueQuery { request_id, subject } => self.cross_cluster_query(now, request_id, subject, &mut out),
        }
        out
    }

    fn on_message(&mut self, now: SimTime, from: NodeId, message: Message, out: &mut Vec<Action>) {
        match message {
            Message::Heartbeat { from: p, seq } => self.on_heartbeat(now, p, seq, out),
            Message::Gossip(msg) => self.on_gossip_receive(now, msg, out),
            Message::Membership(digest) => {
                for peer in self.view.evict_stale(now, self.params.membership_timeout) {
                    out.push(Action::Note(Note::PeerEvicted { peer }));
                }
                for peer in self.view.merge(&digest, now, self.params.membership_timeout) {
                    out.push(Action::Note(Note::PeerJoined { peer }));
                }
                if self.digests.get(&digest.sender).is_none_or(|m| !m.iter().eq(digest.monitored.iter())) {
                    self.digests.insert(digest.sender.clone(), digest.monitored.iter().cloned().collect());
                }
            }
            Message::QueryRequest(req) => self.on_query_request(now, req, out),
            Message::QueryResponse(resp) => self.on_query_response(now, resp, out),
        }
        let _ = from;
    }

    fn on_heartbeat(&mut self, now: SimTime, p: ProcessId, seq: u64, out: &mut Vec<Action>) {
        let Some(slot) = self.slots.get_mut(&p) else {
            return;
        };
        let was_frozen = slot.entry.is_frozen();
        match slot.entry.on_heartbeat(now, seq) {
            Ok(()) => {
                if was_frozen {
                    out.push(Action::Note(Note::Unfrozen { subject: p.clone(), reason: UnfreezeReason::Heartbeat }));
                }
                self.reevaluate(&p, now, out);
            }
            Err(AccrualError::OutOfOrder { .. }) | Err(AccrualError::Predictor(_)) => {
                out.push(Action::Note(Note::HeartbeatRejected { subject: p, seq }));
            }
        }
    }

    /// Records a peer's value for the subject and answers alerts and probes
    /// with the local level.
    fn on_gossip_receive(&mut self, now: SimTime, msg: GossipMessage, out: &mut Vec<Action>) {
        let ttl = self.params.remote_value_ttl;
        let Some(slot) = self.slots.get_mut(&msg.subject) else {
            out.push(Action::Note(Note::GossipIgnored { subject: msg.subject, from: msg.sender }));
            return;
        };
        slot.entry.advance(now);
        slot.entry.record_remote(&msg.sender, msg.suspicion, now, now + ttl);
        if slot.entry.unfreeze() {
            out.push(Action::Note(Note::Unfrozen { subject: msg.subject.clone(), reason: UnfreezeReason::Gossip }));
        }
        if msg.kind.wants_reply() && self.gossip {
            let reply = GossipMessage {
                sender: self.id.clone(),
                subject: msg.subject.clone(),
                suspicion: slot.entry.local_suspicion(now),
                sent_at: now,
                kind: GossipKind::Reply,
            };
            out.push(Action::Send { to: msg.sender.clone().into(), message: Message::Gossip(reply) });
        }
        self.reevaluate(&msg.subject, now, out);
    }

    /// Thresholds the effective level, reacts to crossings, probes vetoing
    /// peers and arms the next wake for this entry.
    fn reevaluate(&mut self, subject: &ProcessId, now: SimTime, out: &mut Vec<Action>) {
        let threshold = self.params.threshold;
        let probe_interval = self.params.probe_interval;
        let gossip = self.gossip;
        let slot = self.slots.get_mut(subject).expect("monitored subject");
        slot.entry.advance(now);
        if slot.entry.freeze_deadline().is_some_and(|d| now >= d) {
            slot.entry.unfreeze();
            out.push(Action::Note(Note::Unfrozen { subject: subject.clone(), reason: UnfreezeReason::Deadline }));
        }
        let effective = slot.entry.effective_suspicion(now);
        let local = slot.entry.local_suspicion(now);
        let above = effective >= threshold;
        if above != slot.suspected {
            slot.suspected = above;
            if above {
                out.push(Action::Note(Note::CrossedUp { subject: subject.clone(), effective, local }));
                self.on_threshold_crossed_up(subject, now, out);
            } else {
                out.push(Action::Note(Note::CrossedDown { subject: subject.clone(), effective, local }));
                self.on_threshold_crossed_down(subject, now, out);
            }
        }

        let slot = self.slots.get_mut(subject).expect("monitored subject");
        let local = slot.entry.local_suspicion(now);
        let vetoed = gossip && !slot.suspected && local >= threshold;
        if vetoed {
            match slot.next_probe {
                Some(due) if now >= due => {
                    let peers = slot.entry.vetoing_peers(now, threshold);
                    for peer in peers {
                        let probe = GossipMessage {
                            sender: self.id.clone(),
                            subject: subject.clone(),
                            suspicion: local,
                            sent_at: now,
                            kind: GossipKind::Probe,
                        };
                        out.push(Action::Send { to: peer.into(), message: Message::Gossip(probe) });
                    }
                    slot.next_probe = Some(now + probe_interval);
                }
                Some(_) => {}
                None => slot.next_probe = Some(now + probe_interval),
            }
        } else {
            slot.next_probe = None;
        }

        // next instant at which something can change without new input
        let mut candidates: Vec<SimTime> = Vec::new();
        if let Some(d) = slot.entry.freeze_deadline() {
            candidates.push(d);
        } else if local < threshold {
            candidates.push(slot.entry.time_accrued_reaches(threshold, now));
        }
        if !slot.suspected {
            candidates.extend(slot.entry.earliest_remote_expiry(now));
            candidates.extend(slot.next_probe);
        }
        slot.generation += 1;
        if let Some(at) = candidates.into_iter().filter(|&c| c > now).min() {
            out.push(Action::Arm { at, timer: Timer::Wake { subject: subject.clone(), generation: slot.generation } });
        }
    }

    /// Freezes local accrual and alerts random peers. Edge-triggered: a
    /// frozen entry emits nothing.
    fn on_threshold_crossed_up(&mut self, subject: &ProcessId, now: SimTime, out: &mut Vec<Action>) {
        if !self.gossip {
            return;
        }
        let freeze_timeout = self.params.freeze_timeout;
        let slot = self.slots.get_mut(subject).expect("monitored subject");
        if slot.entry.is_frozen() {
            return;
        }
        let deadline = now + freeze_timeout;
        slot.entry.freeze(now, deadline);
        let value = slot.entry.local_suspicion(now);
        out.push(Action::Note(Note::Frozen { subject: subject.clone(), value, deadline }));
        self.gossip_to_random_peers(subject, GossipKind::Alert, value, now, out);
    }

    fn on_threshold_crossed_down(&mut self, subject: &ProcessId, now: SimTime, out: &mut Vec<Action>) {
        if !self.gossip {
            return;
        }
        let value = self.slots[subject].entry.local_suspicion(now);
        self.gossip_to_random_peers(subject, GossipKind::Recovery, value, now, out);
    }

    fn gossip_to_random_peers(
        &mut self,
        subject: &ProcessId,
        kind: GossipKind,
        value: f64,
        now: SimTime,
        out: &mut Vec<Action>,
    ) {
        let candidates: Vec<DetectorId> = self.view.members().cloned().collect();
        let targets = self.sampler.select(&candidates, self.params.gossip_fanout, &mut self.rng);
        if targets.is_empty() {
            out.push(Action::Note(Note::Isolated { subject: subject.clone() }));
        }
        for target in targets {
            let msg = GossipMessage {
                sender: self.id.clone(),
                subject: subject.clone(),
                suspicion: value,
                sent_at: now,
                kind,
            };
            out.push(Action::Send { to: target.into(), message: Message::Gossip(msg) });
        }
    }

    /// Broadcasts the view and monitored set to the cluster and re-arms.
    fn periodic_membership_broadcast(&mut self, now: SimTime, out: &mut Vec<Action>) {
        for peer in self.view.evict_stale(now, self.params.membership_timeout) {
            self.digests.remove(&peer);
            out.push(Action::Note(Note::PeerEvicted { peer }));
        }
        let digest = self.view.digest(&self.id, now, &self.monitored());
        self.view.mark_broadcast(now);
        out.push(Action::Broadcast { message: Message::Membership(Arc::new(digest)) });
        out.push(Action::Arm { at: now + self.params.gossip_period, timer: Timer::Broadcast });
    }

    fn cross_cluster_query(&mut self, now: SimTime, request_id: RequestId, subject: ProcessId, out: &mut Vec<Action>) {
        if subject.cluster == self.id.cluster {
            let outcome = match self.slots.get(&subject) {
                Some(slot) => QueryOutcome::Value {
                    value: slot.entry.effective_suspicion(now),
                    answered_by: self.id.clone(),
                    answered_at: now,
                },
                None => QueryOutcome::UnknownSubject,
            };
            out.push(Action::Note(Note::QueryResolved { request_id, subject, outcome }));
            return;
        }
        let border = match self.registry.resolve_border(&subject.cluster) {
            Ok(b) => b,
            Err(_) => {
                out.push(Action::Note(Note::QueryResolved {
                    request_id,
                    subject,
                    outcome: QueryOutcome::UnresolvableCluster,
                }));
                return;
            }
        };
        let deadline = now + self.params.query_deadline;
        let request = CrossClusterRequest {
            request_id,
            origin_detector: self.id.clone(),
            subject: subject.clone(),
            issued_at: now,
            deadline,
            reply_to: self.id.clone(),
            relayed: false,
        };
        self.pending.insert(request_id, PendingQuery { subject, issued_at: now });
        out.push(Action::Send { to: border.into(), message: Message::QueryRequest(request) });
        out.push(Action::Arm { at: deadline, timer: Timer::QueryDeadline(request_id) });
    }

    fn on_query_request(&mut self, now: SimTime, req: CrossClusterRequest, out: &mut Vec<Action>) {
        let respond = |outcome: QueryOutcome| Action::Send {
            to: req.reply_to.clone().into(),
            message: Message::QueryResponse(QueryResponse {
                request_id: req.request_id,
                subject: req.subject.clone(),
                outcome,
            }),
        };
        if let Some(slot) = self.slots.get(&req.subject) {
            out.push(respond(QueryOutcome::Value {
                value: slot.entry.effective_suspicion(now),
                answered_by: self.id.clone(),
                answered_at: now,
            }));
            return;
        }
        if req.relayed {
            out.push(respond(QueryOutcome::UnknownSubject));
            return;
        }
        let monitor = self
            .digests
            .iter()
            .find(|(d, set)| set.contains(&req.subject) && self.view.contains(d))
            .map(|(d, _)| d.clone());
        match monitor {
            Some(monitor) => {
                self.relays.insert(req.request_id, req.reply_to.clone());
                let relayed = CrossClusterRequest { reply_to: self.id.clone(), relayed: true, ..req };
                out.push(Action::Send { to: monitor.into(), message: Message::QueryRequest(relayed) });
            }
            None => out.push(respond(QueryOutcome::UnknownSubject)),
        }
    }

    fn on_query_response(&mut self, _now: SimTime, resp: QueryResponse, out: &mut Vec<Action>) {
        if let Some(origin) = self.relays.remove(&resp.request_id) {
            out.push(Action::Send { to: origin.into(), message: Message::QueryResponse(resp) });
            return;
        }
        match self.pending.remove(&resp.request_id) {
            Some(q) => {
                debug_assert!(q.issued_at <= _now);
                out.push(Action::Note(Note::QueryResolved {
                    request_id: resp.request_id,
                    subject: resp.subject,
                    outcome: resp.outcome,
                }))
            }
            None => out.push(Action::Note(Note::LateResponse { request_id: resp.request_id })),
        }
    }
}
