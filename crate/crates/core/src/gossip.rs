//! Cluster-local gossip of suspicion levels.
//!
//! When a detector's suspicion for a process crosses the threshold it tells a
//! few random peers, freezes its own accrual and waits for their answers; the
//! minimum of all known values wins, so any peer that still hears the process
//! vetoes the false positive. Crossing back down is announced the same way.
//! Detectors find each other through periodic membership broadcasts.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use rand::seq::index;
use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::model::{DetectorId, ProcessId, SimTime};

/// Why a gossip message was sent.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GossipKind {
    /// Suspicion crossed the threshold upwards.
    Alert,
    /// Suspicion crossed the threshold downwards.
    Recovery,
    /// Answer to an [`GossipKind::Alert`] or [`GossipKind::Probe`].
    Reply,
    /// Re-asks peers whose reports currently veto a high local level.
    Probe,
}

impl GossipKind {
    pub fn wants_reply(self) -> bool {
        matches!(self, GossipKind::Alert | GossipKind::Probe)
    }

    pub fn label(self) -> &'static str {
        match self {
            GossipKind::Alert => "alert",
            GossipKind::Recovery => "recovery",
            GossipKind::Reply => "reply",
            GossipKind::Probe => "probe",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GossipMessage {
    pub sender: DetectorId,
    pub subject: ProcessId,
    pub suspicion: f64,
    pub sent_at: SimTime,
    pub kind: GossipKind,
}

/// Periodic broadcast: who the sender knows, and which processes it monitors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MembershipDigest {
    pub sender: DetectorId,
    pub sent_at: SimTime,
    /// Known detectors with the last time each was heard from directly.
    pub known: Vec<(DetectorId, SimTime)>,
    pub monitored: Vec<ProcessId>,
}

/// The detectors of the local cluster this detector knows about.
///
/// Each entry carries the global time at which that detector was last heard
/// from first-hand; merging keeps the freshest time, and entries older than
/// the membership timeout are evicted, so a partitioned peer drops out and
/// comes back with the first broadcast after the partition heals.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct MembershipView {
    owner: Option<DetectorId>,
    known: BTreeMap<DetectorId, SimTime>,
    last_broadcast: Option<SimTime>,
}

impl MembershipView {
    pub fn new(owner: DetectorId) -> Self {
        MembershipView { owner: Some(owner), ..Default::default() }
    }

    /// A view over a fixed set of peers, all considered fresh at `at`.
    pub fn with_peers(owner: DetectorId, peers: impl IntoIterator<Item = DetectorId>, at: SimTime) -> Self {
        let mut view = MembershipView::new(owner);
        for p in peers {
            view.observe(&p, at);
        }
        view
    }

    pub fn contains(&self, d: &DetectorId) -> bool {
        self.known.contains_key(d)
    }

    pub fn len(&self) -> usize {
        self.known.len()
    }

    pub fn is_empty(&self) -> bool {
        self.known.is_empty()
    }

    pub fn members(&self) -> impl Iterator<Item = &DetectorId> {
        self.known.keys()
    }

    pub fn last_broadcast(&self) -> Option<SimTime> {
        self.last_broadcast
    }

    pub fn mark_broadcast(&mut self, t: SimTime) {
        self.last_broadcast = Some(t);
    }

    /// Records that `d` was heard from at `at`. Returns true if `d` is new.
    pub fn observe(&mut self, d: &DetectorId, at: SimTime) -> bool {
        if self.owner.as_ref() == Some(d) {
            return false;
        }
        match self.known.get_mut(d) {
            Some(seen) => {
                *seen = (*seen).max(at);
                false
            }
            None => {
                self.known.insert(d.clone(), at);
                true
            }
        }
    }

    /// Unions a received digest into this view, ignoring stale hearsay.
    /// Returns the detectors that were not known before.
    pub fn merge(&mut self, digest: &MembershipDigest, now: SimTime, timeout: SimTime) -> Vec<DetectorId> {
        let mut added = Vec::new();
        if self.observe(&digest.sender, digest.sent_at) {
            added.push(digest.sender.clone());
        }
        for (d, seen) in &digest.known {
            if now.since(*seen) < timeout.as_f64() && self.observe(d, *seen) {
                added.push(d.clone());
            }
        }
        added
    }

    /// Drops peers not heard from within `timeout`. Returns the evicted ids.
    pub fn evict_stale(&mut self, now: SimTime, timeout: SimTime) -> Vec<DetectorId> {
        let stale: Vec<DetectorId> = self
            .known
            .iter()
            .filter(|(_, &seen)| now.since(seen) >= timeout.as_f64())
            .map(|(d, _)| d.clone())
            .collect();
        for d in &stale {
            self.known.remove(d);
        }
        stale
    }

    pub fn digest(&self, sender: &DetectorId, now: SimTime, monitored: &BTreeSet<ProcessId>) -> MembershipDigest {
        MembershipDigest {
            sender: sender.clone(),
            sent_at: now,
            known: self.known.iter().map(|(d, t)| (d.clone(), *t)).collect(),
            monitored: monitored.iter().cloned().collect(),
        }
    }
}

/// Strategy for picking gossip targets out of a membership view.
pub trait PeerSampler: fmt::Debug + Send + Sync {
    fn select(&self, candidates: &[DetectorId], fanout: usize, rng: &mut dyn RngCore) -> BTreeSet<DetectorId>;
}

/// Uniform sampling without replacement.
#[derive(Debug, Clone, Copy, Default)]
pub struct UniformSampler;

impl PeerSampler for UniformSampler {
    fn select(&self, candidates: &[DetectorId], fanout: usize, rng: &mut dyn RngCore) -> BTreeSet<DetectorId> {
        let amount = fanout.min(candidates.len());
        if amount == 0 {
            return BTreeSet::new();
        }
        index::sample(rng, candidates.len(), amount).into_iter().map(|i| candidates[i].clone()).collect()
    }
}

/// Picks `min(fanout, |view|)` distinct peers uniformly at random.
pub fn select_gossip_targets(view: &MembershipView, fanout: usize, rng: &mut dyn RngCore) -> BTreeSet<DetectorId> {
    let candidates: Vec<DetectorId> = view.members().cloned().collect();
    UniformSampler.select(&candidates, fanout, rng)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ClusterId;
    use crate::simnet::RandomStream;

    fn det(i: u32) -> DetectorId {
        DetectorId::new(&ClusterId::new("A"), i)
    }

    fn t(v: f64) -> SimTime {
        SimTime::from_f64(v)
    }

    #[test]
    fn fanout_is_clipped_to_view() {
        let view = MembershipView::with_peers(det(0), [det(1)], t(0.0));
        let mut rng = RandomStream::new(1).substream("test");
        assert_eq!(select_gossip_targets(&view, 3, &mut rng), [det(1)].into());
    }

    #[test]
    fn empty_view_selects_nobody() {
        let view = MembershipView::new(det(0));
        let mut rng = RandomStream::new(1).substream("test");
        assert!(select_gossip_targets(&view, 3, &mut rng).is_empty());
    }

    #[test]
    fn selection_is_reproducible_for_a_seed() {
        let view = MembershipView::with_peers(det(0), (1..=10).map(det), t(0.0));
        let pick = |seed| {
            let mut rng = RandomStream::new(seed).substream("detector/A/d0");
            select_gossip_targets(&view, 3, &mut rng)
        };
        let a = pick(42);
        assert_eq!(a.len(), 3);
        assert_eq!(a, pick(42));
        assert!(a.iter().all(|d| view.contains(d)));
        // different seeds eventually disagree
        assert!((0..20).any(|s| pick(s) != a));
    }

    #[test]
    fn view_never_contains_owner() {
        let mut view = MembershipView::new(det(0));
        assert!(!view.observe(&det(0), t(1.0)));
        let digest = MembershipDigest {
            sender: det(1),
            sent_at: t(2.0),
            known: vec![(det(0), t(2.0)), (det(2), t(1.5))],
            monitored: vec![],
        };
        assert_eq!(view.merge(&digest, t(2.0), t(10.0)), vec![det(1), det(2)]);
        assert_eq!(view.members().cloned().collect::<Vec<_>>(), vec![det(1), det(2)]);
    }

    #[test]
    fn merge_is_a_fixed_point_in_steady_state() {
        let mut view = MembershipView::with_peers(det(0), [det(1), det(2)], t(5.0));
        let digest = MembershipDigest {
            sender: det(1),
            sent_at: t(5.0),
            known: vec![(det(0), t(5.0)), (det(2), t(5.0))],
            monitored: vec![],
        };
        let before = view.clone();
        assert!(view.merge(&digest, t(5.0), t(10.0)).is_empty());
        assert_eq!(view, before);
    }

    #[test]
    fn stale_hearsay_is_not_readmitted() {
        let mut view = MembershipView::with_peers(det(0), [det(1)], t(0.0));
        assert_eq!(view.evict_stale(t(20.0), t(15.0)), vec![det(1)]);
        let digest =
            MembershipDigest { sender: det(2), sent_at: t(20.0), known: vec![(det(1), t(0.0))], monitored: vec![] };
        view.merge(&digest, t(20.0), t(15.0));
        assert!(!view.contains(&det(1)));
        assert!(view.contains(&det(2)));
    }
}
