//! ShortFin: turns one correct decision into a decision at every correct
//! process within 2δ after GST.

use std::any::Any;

use crate::payload::Payload;
use crate::runtime::{Action, Automaton, Event, Indication, Request};
use crate::tally::Tally;
use crate::types::{Quorum, Value, ValueWidth};

#[derive(Debug, Clone)]
pub struct Finisher {
    q: Quorum,
    width: ValueWidth,
    started: bool,
    finish_from: Tally<Value>,
    finished: Option<Value>,
}

impl Finisher {
    pub fn new(q: Quorum, width: ValueWidth) -> Finisher {
        Finisher { q, width, started: false, finish_from: Tally::default(), finished: None }
    }

    pub fn started(&self) -> bool {
        self.started
    }

    pub fn finished(&self) -> Option<Value> {
        self.finished
    }

    fn on_finish(&mut self, v: Value) -> Vec<Action> {
        let mut out = Vec::new();
        let support = self.finish_from.count(v);
        if support >= self.q.weak() && !self.started {
            self.started = true;
            out.push(Action::broadcast(Payload::Finish(v)));
        }
        if support >= self.q.strong() && self.finished.is_none() {
            self.finished = Some(v);
            out.push(Action::Indicate(Indication::Finish(v)));
        }
        out
    }
}

impl Automaton for Finisher {
    fn step(&mut self, event: Event) -> Vec<Action> {
        match event {
            Event::Request(Request::ToFinish(v)) if !self.started => {
                self.started = true;
                vec![Action::broadcast(Payload::Finish(v))]
            }
            Event::Message { from, path, payload: Payload::Finish(v) }
                if path.is_root() && self.width.fits(v) =>
            {
                if self.finish_from.insert(v, from) {
                    self.on_finish(v)
                } else {
                    vec![]
                }
            }
            _ => vec![],
        }
    }

    fn as_any(&self) -> &dyn Any {
        self
    }
}
