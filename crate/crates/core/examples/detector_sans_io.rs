//! Drives one detector by hand: inputs go in, actions come out, no network.

use std::collections::BTreeMap;

use clusterfd::cluster::BorderRegistry;
use clusterfd::detector::{Action, DetectorState, Input, Message, Note, Timer};
use clusterfd::model::DetectorParams;
use clusterfd::simnet::RandomStream;
use clusterfd::{ClusterId, DetectorId, ProcessId, SimTime};

fn show(now: f64, actions: &[Action]) {
    for a in actions {
        match a {
            Action::Send { to, message } => println!("  t={now:<6} send {} to {to}", message.label()),
            Action::Broadcast { message } => println!("  t={now:<6} broadcast {}", message.label()),
            Action::Arm { at, timer: Timer::Wake { subject, .. } } => {
                println!("  t={now:<6} wake up for {subject} at {at:.4}")
            }
            Action::Arm { at, timer } => println!("  t={now:<6} arm {timer:?} at {at:.4}"),
            Action::Note(Note::CrossedUp { subject, effective, .. }) => {
                println!("  t={now:<6} {subject} crossed the threshold at {effective:.4}")
            }
            Action::Note(Note::Frozen { subject, deadline, .. }) => {
                println!("  t={now:<6} froze {subject} until {deadline:.4}")
            }
            Action::Note(Note::Isolated { subject }) => println!("  t={now:<6} no peer to ask about {subject}"),
            Action::Note(n) => println!("  t={now:<6} {n:?}"),
        }
    }
}

fn main() {
    let a = ClusterId::new("A");
    let p = ProcessId::new(&a, 0);
    let me = DetectorId::new(&a, 0);
    let registry = BorderRegistry::new(BTreeMap::from([(a.clone(), vec![me.clone()])]));
    let rng = RandomStream::new(1).substream("detector/A/d0");
    let mut d = DetectorState::new(me, DetectorParams::with_period(1.0), [p.clone()], registry, rng, SimTime::ZERO);

    let mut wakes = Vec::new();
    let mut collect = |now: f64, actions: Vec<Action>| {
        show(now, &actions);
        for a in actions {
            if let Action::Arm { at, timer: t @ Timer::Wake { .. } } = a {
                wakes.push((at, t));
            }
        }
    };

    collect(0.0, d.start(SimTime::ZERO, SimTime::from_f64(5.0)));
    for seq in 1..=5u64 {
        let now = seq as f64;
        let input = Input::Deliver { from: p.clone().into(), message: Message::Heartbeat { from: p.clone(), seq } };
        collect(now, d.handle(SimTime::from_f64(now), input));
    }

    // the process goes quiet; fire the latest wake-up the detector asked for
    if let Some((at, timer)) = wakes.pop() {
        println!("heartbeats stop; firing wake-up at {at:.4}");
        show((at.as_f64() * 1e4).round() / 1e4, &d.handle(at, Input::Timer(timer)));
    }
    let (effective, local) = d.sample(&p, SimTime::from_f64(9.0)).unwrap();
    println!("at t=9: effective {effective:.4}, local {local:.4}, suspected {:?}", d.is_suspected(&p));
}
