//! ShortVB3 validation broadcast over an embedded reducing broadcast.

use std::any::Any;
use std::collections::BTreeSet;

use crate::payload::{Payload, Segment, Tag};
use crate::reducing_broadcast::ReducingBroadcast;
use crate::runtime::{drain, mute, Action, Automaton, Children, Event, Indication, Outbox, Request};
use crate::tally::Tally;
use crate::types::{ProcessId, Quorum, Slot, Value, ValueWidth};

const RB: Segment = Segment::new(Tag::Rb);

pub struct ValidationBroadcast {
    q: Quorum,
    width: ValueWidth,
    def: Value,
    broadcast_done: bool,
    children: Children,
    init_senders: BTreeSet<ProcessId>,
    init_from: Tally<Slot>,
    echo_sent: BTreeSet<Slot>,
    echo_from: Tally<Slot>,
    completed: bool,
    validated: BTreeSet<Value>,
    abandoned: bool,
}

impl ValidationBroadcast {
    /// `def` is this process's default value, substituted for ⊥.
    pub fn new(q: Quorum, width: ValueWidth, def: Value) -> ValidationBroadcast {
        let mut children = Children::new(0);
        children
            .spawn(RB, Box::new(ReducingBroadcast::new(q, width)))
            .expect("fresh child table");
        ValidationBroadcast {
            q,
            width,
            def,
            broadcast_done: false,
            children,
            init_senders: BTreeSet::new(),
            init_from: Tally::default(),
            echo_sent: BTreeSet::new(),
            echo_from: Tally::default(),
            completed: false,
            validated: BTreeSet::new(),
            abandoned: false,
        }
    }

    pub fn default_value(&self) -> Value {
        self.def
    }

    pub fn completed(&self) -> bool {
        self.completed
    }

    pub fn validated(&self) -> &BTreeSet<Value> {
        &self.validated
    }

    fn evaluate(&mut self, out: &mut Outbox) {
        for x in self.init_from.reaching(self.q.weak()) {
            if self.echo_sent.insert(x) {
                out.push(Action::broadcast(Payload::Echo(1, x)));
            }
        }
        let gap = self.init_senders.len() - self.init_from.max_count();
        if gap >= self.q.weak() && self.echo_sent.insert(Slot::Bot) {
            out.push(Action::broadcast(Payload::Echo(1, Slot::Bot)));
        }
        if self.broadcast_done && !self.completed && self.echo_from.max_count() >= self.q.strong() {
            self.completed = true;
            out.indicate(Indication::Completed);
        }
        for x in self.echo_from.reaching(self.q.weak()) {
            let v = x.value().unwrap_or(self.def);
            if self.validated.insert(v) {
                out.indicate(Indication::Validate(v));
            }
        }
    }

    fn handle(&mut self, event: Event, out: &mut Outbox) {
        match event {
            Event::Request(Request::Broadcast(v)) => {
                if self.broadcast_done || self.abandoned {
                    return;
                }
                self.broadcast_done = true;
                out.absorb(self.children.request(RB, Request::Broadcast(v)));
                self.evaluate(out);
            }
            Event::Request(Request::Abandon) => {
                self.abandoned = true;
                out.absorb(self.children.request(RB, Request::Abandon));
            }
            Event::Child { indication: Indication::Deliver(x), .. } => {
                out.push(Action::broadcast(Payload::Init(x)));
            }
            Event::Message { from, path, payload } => {
                if !path.is_root() {
                    out.absorb(self.children.deliver(from, &path, payload, |_| false));
                    return;
                }
                if !payload.well_formed(self.width) {
                    return;
                }
                match payload {
                    Payload::Init(x) => {
                        if !self.init_senders.insert(from) {
                            return;
                        }
                        self.init_from.insert(x, from);
                    }
                    Payload::Echo(1, x) => {
                        if !self.echo_from.insert(x, from) {
                            return;
                        }
                    }
                    _ => return,
                }
                self.evaluate(out);
            }
            _ => {}
        }
    }
}

impl Automaton for ValidationBroadcast {
    fn step(&mut self, event: Event) -> Vec<Action> {
        let out = drain(event, |ev, out| self.handle(ev, out));
        if self.abandoned {
            mute(out)
        } else {
            out
        }
    }

    fn misrouted(&self) -> u64 {
        self.children.misrouted()
    }

    fn as_any(&self) -> &dyn Any {
        self
    }
}
