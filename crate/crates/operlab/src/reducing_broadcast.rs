//! Reducing broadcast for constant-size values: the init/echo rule set of
//! a rebuilding broadcast, applied to raw values.
//!
//! Every correct broadcaster delivers either a value broadcast by a correct
//! process or ⊥; when all correct processes broadcast the same value, they
//! all deliver it.

use std::any::Any;
use std::collections::BTreeSet;

use crate::payload::Payload;
use crate::runtime::{mute, Action, Automaton, Event, Indication, Request};
use crate::tally::Tally;
use crate::types::{ProcessId, Quorum, Slot, Value, ValueWidth};

#[derive(Debug, Clone)]
pub struct ReducingBroadcast {
    q: Quorum,
    width: ValueWidth,
    own: Option<Value>,
    init_senders: BTreeSet<ProcessId>,
    init_from: Tally<Value>,
    echo_from: Tally<Value>,
    echoed: BTreeSet<Value>,
    delivered: Option<Slot>,
    abandoned: bool,
}

impl ReducingBroadcast {
    pub fn new(q: Quorum, width: ValueWidth) -> ReducingBroadcast {
        ReducingBroadcast {
            q,
            width,
            own: None,
            init_senders: BTreeSet::new(),
            init_from: Tally::default(),
            echo_from: Tally::default(),
            echoed: BTreeSet::new(),
            delivered: None,
            abandoned: false,
        }
    }

    pub fn delivered(&self) -> Option<Slot> {
        self.delivered
    }

    fn total(&self, w: Value) -> usize {
        self.init_from.union_count(w, &self.echo_from)
    }

    fn evaluate(&mut self) -> Vec<Action> {
        let mut out = Vec::new();
        for w in self.init_from.reaching(self.q.weak()) {
            if Some(w) != self.own && self.echoed.insert(w) {
                out.push(Action::broadcast(Payload::Echo(1, Slot::Val(w))));
            }
        }
        if let (Some(own), None) = (self.own, self.delivered) {
            if let Some(x) = self.delivery(own) {
                self.delivered = Some(x);
                out.push(Action::Indicate(Indication::Deliver(x)));
            }
        }
        out
    }

    fn delivery(&self, own: Value) -> Option<Slot> {
        let candidates: BTreeSet<Value> =
            self.init_from.iter().chain(self.echo_from.iter()).map(|(w, _)| w).collect();
        if candidates.iter().any(|&w| w != own && self.total(w) >= self.q.weak()) {
            return Some(Slot::Bot);
        }
        if let Some(&w) = candidates.iter().find(|&&w| self.total(w) >= self.q.strong()) {
            return Some(Slot::Val(w));
        }
        if self.init_senders.len() - self.init_from.max_count() >= self.q.weak() {
            return Some(Slot::Bot);
        }
        None
    }
}

impl Automaton for ReducingBroadcast {
    fn step(&mut self, event: Event) -> Vec<Action> {
        let out = match event {
            Event::Request(Request::Broadcast(v)) => {
                if self.own.is_some() || self.abandoned {
                    return vec![];
                }
                self.own = Some(v);
                let mut out = vec![Action::broadcast(Payload::Init(Slot::Val(v)))];
                out.extend(self.evaluate());
                out
            }
            Event::Request(Request::Abandon) => {
                self.abandoned = true;
                vec![]
            }
            Event::Message { from, path, payload } if path.is_root() && payload.well_formed(self.width) => {
                match payload {
                    Payload::Init(Slot::Val(w)) => {
                        if !self.init_senders.insert(from) {
                            return vec![];
                        }
                        self.init_from.insert(w, from);
                    }
                    Payload::Echo(1, Slot::Val(w)) => {
                        if !self.echo_from.insert(w, from) {
                            return vec![];
                        }
                    }
                    _ => return vec![],
                }
                self.evaluate()
            }
            _ => vec![],
        };
        if self.abandoned {
            mute(out)
        } else {
            out
        }
    }

    fn as_any(&self) -> &dyn Any {
        self
    }
}
