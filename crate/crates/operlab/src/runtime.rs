//! The automaton contract and hierarchical composition.
//!
//! Every protocol is a deterministic state machine stepped by [`Event`]s and
//! answering with [`Action`]s. Composites host children under path segments,
//! prefix their outbound traffic and turn their indications into
//! [`Event::Child`] events for the parent.

use std::any::Any;
use std::collections::{BTreeMap, VecDeque};
use std::fmt;

use crate::graded_consensus::GbcaOutcome;
use crate::payload::{InstancePath, Payload, Segment};
use crate::types::{Grade, ProcessId, Slot, Value, View};

/// A timer handle, unique per process: the owning instance and a counter.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct TimerId {
    pub path: InstancePath,
    pub key: u32,
}

impl TimerId {
    pub fn local(key: u32) -> TimerId {
        TimerId { path: InstancePath::root(), key }
    }
}

impl fmt::Display for TimerId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}#{}", self.path, self.key)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Request {
    Propose(Value),
    /// Broadcast a value through a broadcast primitive (RB, VB).
    Broadcast(Value),
    ToFinish(Value),
    Abandon,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Indication {
    /// Reducing broadcast output.
    Deliver(Slot),
    /// Graded consensus output, with the raw GBCA outcome it came from.
    Graded { outcome: GbcaOutcome, value: Value, grade: Grade },
    /// Output of the simulated synchronous agreement.
    SimDecision(Option<Value>),
    Validate(Value),
    Completed,
    Decide(Value),
    Finish(Value),
    EnteredView(View),
    Diagnostic(String),
}

impl Indication {
    pub fn name(&self) -> &'static str {
        match self {
            Indication::Deliver(_) => "deliver",
            Indication::Graded { .. } => "graded",
            Indication::SimDecision(_) => "sim-decision",
            Indication::Validate(_) => "validate",
            Indication::Completed => "completed",
            Indication::Decide(_) => "decide",
            Indication::Finish(_) => "finish",
            Indication::EnteredView(_) => "enter-view",
            Indication::Diagnostic(_) => "diagnostic",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Event {
    Message { from: ProcessId, path: InstancePath, payload: Payload },
    Timer(TimerId),
    Request(Request),
    /// An indication raised by the child at `from`.
    Child { from: Segment, indication: Indication },
}

impl Event {
    pub fn message(from: ProcessId, payload: Payload) -> Event {
        Event::Message { from, path: InstancePath::root(), payload }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Action {
    Send { to: ProcessId, path: InstancePath, payload: Payload },
    /// Send to every process, including the sender.
    Broadcast { path: InstancePath, payload: Payload },
    SetTimer { id: TimerId, after: u64 },
    CancelTimer(TimerId),
    Indicate(Indication),
    Halt,
}

impl Action {
    pub fn broadcast(payload: Payload) -> Action {
        Action::Broadcast { path: InstancePath::root(), payload }
    }

    pub fn is_send(&self) -> bool {
        matches!(self, Action::Send { .. } | Action::Broadcast { .. })
    }
}

/// A deterministic protocol state machine.
pub trait Automaton: Any {
    /// Consumes one event. A halted automaton returns no actions.
    fn step(&mut self, event: Event) -> Vec<Action>;

    fn halted(&self) -> bool {
        false
    }

    /// Envelopes dropped because their path named no instance, including
    /// those counted by descendants.
    fn misrouted(&self) -> u64 {
        0
    }

    fn as_any(&self) -> &dyn Any;
}

/// Drops every action except indications and timer cancellations. Used by
/// abandoned instances that may still report but must not send.
pub fn mute(actions: Vec<Action>) -> Vec<Action> {
    actions.into_iter().filter(|a| matches!(a, Action::Indicate(_) | Action::CancelTimer(_))).collect()
}

/// Child output after lifting into the parent's address space.
#[derive(Debug, Default)]
pub struct Routed {
    pub actions: Vec<Action>,
    pub indications: Vec<(Segment, Indication)>,
}

impl Routed {
    fn lift(seg: Segment, actions: Vec<Action>) -> Routed {
        let mut out = Routed::default();
        for a in actions {
            match a {
                Action::Send { to, path, payload } => {
                    out.actions.push(Action::Send { to, path: path.prepend(seg), payload })
                }
                Action::Broadcast { path, payload } => {
                    out.actions.push(Action::Broadcast { path: path.prepend(seg), payload })
                }
                Action::SetTimer { id, after } => out.actions.push(Action::SetTimer {
                    id: TimerId { path: id.path.prepend(seg), key: id.key },
                    after,
                }),
                Action::CancelTimer(id) => {
                    out.actions.push(Action::CancelTimer(TimerId { path: id.path.prepend(seg), key: id.key }))
                }
                Action::Indicate(ind) => out.indications.push((seg, ind)),
                // Only a root halts.
                Action::Halt => {}
            }
        }
        out
    }

    fn extend(&mut self, other: Routed) {
        self.actions.extend(other.actions);
        self.indications.extend(other.indications);
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct Buffered {
    from: ProcessId,
    path: InstancePath,
    payload: Payload,
}

/// The child table of a composite automaton.
pub struct Children {
    live: BTreeMap<Segment, Box<dyn Automaton>>,
    pending: BTreeMap<Segment, VecDeque<Buffered>>,
    cap: usize,
    misrouted: u64,
    overflow: u64,
}

impl Children {
    /// `cap` bounds the pre-spawn buffer of each not-yet-spawned child.
    pub fn new(cap: usize) -> Children {
        Children { live: BTreeMap::new(), pending: BTreeMap::new(), cap, misrouted: 0, overflow: 0 }
    }

    /// The default buffer cap: 4 · n · number of message kinds.
    pub fn default_cap(n: usize) -> usize {
        4 * n * crate::payload::Kind::COUNT
    }

    pub fn contains(&self, seg: Segment) -> bool {
        self.live.contains_key(&seg)
    }

    pub fn get(&self, seg: Segment) -> Option<&dyn Automaton> {
        self.live.get(&seg).map(|c| c.as_ref())
    }

    /// Typed access to a live child.
    pub fn downcast<T: Automaton>(&self, seg: Segment) -> Option<&T> {
        self.get(seg)?.as_any().downcast_ref::<T>()
    }

    pub fn segments(&self) -> impl Iterator<Item = Segment> + '_ {
        self.live.keys().copied()
    }

    /// Adds a child and replays its buffered envelopes in arrival order.
    pub fn spawn(&mut self, seg: Segment, child: Box<dyn Automaton>) -> Result<Routed, SpawnError> {
        if self.live.contains_key(&seg) {
            return Err(SpawnError::Duplicate(seg));
        }
        self.live.insert(seg, child);
        let mut out = Routed::default();
        for b in self.pending.remove(&seg).unwrap_or_default() {
            out.extend(self.step_child(seg, Event::Message { from: b.from, path: b.path, payload: b.payload }));
        }
        Ok(out)
    }

    /// Routes an envelope whose path starts at a child segment. Envelopes
    /// for absent children are buffered when `expected(seg)` holds and
    /// counted as misrouted otherwise.
    pub fn deliver(
        &mut self,
        from: ProcessId,
        path: &InstancePath,
        payload: Payload,
        expected: impl Fn(Segment) -> bool,
    ) -> Routed {
        let Some(seg) = path.first() else {
            self.misrouted += 1;
            return Routed::default();
        };
        let rest = path.tail();
        if self.live.contains_key(&seg) {
            return self.step_child(seg, Event::Message { from, path: rest, payload });
        }
        if !expected(seg) {
            self.misrouted += 1;
            return Routed::default();
        }
        let queue = self.pending.entry(seg).or_default();
        if queue.len() >= self.cap {
            queue.pop_front();
            self.overflow += 1;
        }
        queue.push_back(Buffered { from, path: rest, payload });
        Routed::default()
    }

    /// Routes a timer whose path starts at a child segment.
    pub fn timer(&mut self, id: TimerId) -> Routed {
        match id.path.first() {
            Some(seg) if self.live.contains_key(&seg) => {
                self.step_child(seg, Event::Timer(TimerId { path: id.path.tail(), key: id.key }))
            }
            _ => Routed::default(),
        }
    }

    pub fn request(&mut self, seg: Segment, req: Request) -> Routed {
        if self.live.contains_key(&seg) {
            self.step_child(seg, Event::Request(req))
        } else {
            Routed::default()
        }
    }

    fn step_child(&mut self, seg: Segment, event: Event) -> Routed {
        let child = self.live.get_mut(&seg).expect("live child");
        if child.halted() {
            return Routed::default();
        }
        let actions = child.step(event);
        Routed::lift(seg, actions)
    }

    /// Misrouted envelopes here and in every descendant.
    pub fn misrouted(&self) -> u64 {
        self.misrouted + self.live.values().map(|c| c.misrouted()).sum::<u64>()
    }

    /// Buffered envelopes evicted by the cap.
    pub fn overflow(&self) -> u64 {
        self.overflow
    }

    pub fn buffered(&self, seg: Segment) -> usize {
        self.pending.get(&seg).map_or(0, |q| q.len())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum SpawnError {
    #[error("instance {0} already exists")]
    Duplicate(Segment),
}

/// Accumulates the actions of one composite step and queues child
/// indications so they are handled after the current handler returns.
#[derive(Default)]
pub struct Outbox {
    actions: Vec<Action>,
    queue: VecDeque<Event>,
}

impl Outbox {
    pub fn push(&mut self, a: Action) {
        self.actions.push(a);
    }

    pub fn absorb(&mut self, routed: Routed) {
        self.actions.extend(routed.actions);
        self.queue
            .extend(routed.indications.into_iter().map(|(from, indication)| Event::Child { from, indication }));
    }

    pub fn indicate(&mut self, ind: Indication) {
        self.actions.push(Action::Indicate(ind));
    }
}

/// Runs `handle` on `event` and then on every child indication it causes,
/// in FIFO order, until nothing is left.
pub fn drain(event: Event, mut handle: impl FnMut(Event, &mut Outbox)) -> Vec<Action> {
    let mut out = Outbox::default();
    out.queue.push_back(event);
    while let Some(ev) = out.queue.pop_front() {
        handle(ev, &mut out);
    }
    out.actions
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::payload::Tag;

    /// Echoes every message back as a broadcast and reports a timer.
    struct Parrot {
        seen: Vec<Payload>,
    }

    impl Automaton for Parrot {
        fn step(&mut self, event: Event) -> Vec<Action> {
            match event {
                Event::Message { payload, .. } => {
                    self.seen.push(payload.clone());
                    vec![Action::broadcast(payload), Action::Indicate(Indication::Completed)]
                }
                Event::Request(_) => vec![Action::SetTimer { id: TimerId::local(0), after: 5 }],
                _ => vec![],
            }
        }
        fn as_any(&self) -> &dyn Any {
            self
        }
    }

    fn fin(v: u64) -> Payload {
        Payload::Finish(Value(v))
    }

    #[test]
    fn prefix_dispatch_and_lifting() {
        let mut c = Children::new(8);
        let gc1 = Segment::new(Tag::Gc1);
        c.spawn(gc1, Box::new(Parrot { seen: vec![] })).unwrap();
        let path = InstancePath::from_segments(vec![gc1]);
        let r = c.deliver(ProcessId(2), &path, fin(1), |_| false);
        assert_eq!(r.actions, vec![Action::Broadcast { path: path.clone(), payload: fin(1) }]);
        assert_eq!(r.indications, vec![(gc1, Indication::Completed)]);
        let r = c.request(gc1, Request::Abandon);
        assert_eq!(r.actions, vec![Action::SetTimer { id: TimerId { path, key: 0 }, after: 5 }]);
    }

    #[test]
    fn unknown_tag_is_misrouted() {
        let mut c = Children::new(8);
        let path = InstancePath::from_segments(vec![Segment::new(Tag::Vb)]);
        let r = c.deliver(ProcessId(0), &path, fin(1), |_| false);
        assert!(r.actions.is_empty());
        assert_eq!(c.misrouted(), 1);
    }

    #[test]
    fn buffered_replay_in_arrival_order() {
        let mut c = Children::new(8);
        let seg = Segment::crux(View::new(2).unwrap());
        let path = InstancePath::from_segments(vec![seg]);
        for v in [3, 1, 2] {
            c.deliver(ProcessId(v as u16), &path, fin(v), |_| true);
        }
        assert_eq!(c.buffered(seg), 3);
        c.spawn(seg, Box::new(Parrot { seen: vec![] })).unwrap();
        let parrot = c.downcast::<Parrot>(seg).unwrap();
        assert_eq!(parrot.seen, vec![fin(3), fin(1), fin(2)]);
        assert!(matches!(c.spawn(seg, Box::new(Parrot { seen: vec![] })), Err(SpawnError::Duplicate(_))));
    }

    #[test]
    fn buffer_overflow_drops_oldest() {
        let mut c = Children::new(2);
        let seg = Segment::crux(View::new(4).unwrap());
        let path = InstancePath::from_segments(vec![seg]);
        for v in 0..5 {
            c.deliver(ProcessId(0), &path, fin(v), |_| true);
        }
        assert_eq!(c.overflow(), 3);
        c.spawn(seg, Box::new(Parrot { seen: vec![] })).unwrap();
        assert_eq!(c.downcast::<Parrot>(seg).unwrap().seen, vec![fin(3), fin(4)]);
    }
}
