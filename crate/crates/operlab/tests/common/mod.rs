//! Drives a single sub-protocol instance from simnet proposals and turns
//! its outputs into timed trace events.

#![allow(dead_code)]

use std::any::Any;
use std::collections::{BTreeMap, BTreeSet};

use operlab::payload::Accounting;
use operlab::runtime::{Action, Automaton, Event, Indication, Request};
use operlab::simnet::{self, AdversarySpec, DelayRule, DriftRule, NetConfig, Strategy, Trace, TraceKind};
use operlab::types::{ProcessId, ValidityPredicate, Value, ValueWidth};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Drive {
    /// Proposal becomes `Broadcast(v)`.
    Broadcast,
    /// Proposal becomes `ToFinish(v)`; a proposal of 0 is skipped.
    Finish,
    /// Proposal is passed through.
    Propose,
}

pub struct Probe {
    inner: Box<dyn Automaton>,
    drive: Drive,
    halted: bool,
}

impl Probe {
    pub fn new(inner: Box<dyn Automaton>, drive: Drive) -> Probe {
        Probe { inner, drive, halted: false }
    }

    fn translate(&mut self, actions: Vec<Action>) -> Vec<Action> {
        let mut out = Vec::new();
        for a in actions {
            match a {
                Action::Indicate(Indication::Finish(v)) => {
                    out.push(Action::Indicate(Indication::Decide(v)));
                    out.push(Action::Halt);
                    self.halted = true;
                }
                Action::Indicate(Indication::Completed) => out.push(note("completed".into())),
                Action::Indicate(Indication::Validate(v)) => out.push(note(format!("validate {}", v.0))),
                Action::Indicate(Indication::Deliver(x)) => out.push(note(format!("deliver {x:?}"))),
                Action::Indicate(Indication::Graded { outcome, value, grade }) => {
                    out.push(note(format!("graded {outcome:?} {} {}", value.0, grade.as_u8())))
                }
                other => out.push(other),
            }
        }
        out
    }
}

fn note(s: String) -> Action {
    Action::Indicate(Indication::Diagnostic(s))
}

impl Automaton for Probe {
    fn step(&mut self, event: Event) -> Vec<Action> {
        if self.halted {
            return vec![];
        }
        let event = match (self.drive, event) {
            (Drive::Broadcast, Event::Request(Request::Propose(v))) => Event::Request(Request::Broadcast(v)),
            (Drive::Finish, Event::Request(Request::Propose(Value(0)))) => return vec![],
            (Drive::Finish, Event::Request(Request::Propose(v))) => Event::Request(Request::ToFinish(v)),
            (_, e) => e,
        };
        let actions = self.inner.step(event);
        self.translate(actions)
    }

    fn halted(&self) -> bool {
        self.halted
    }

    fn as_any(&self) -> &dyn Any {
        self
    }
}

/// Probe notes of correct processes: `(time, process, text)`.
pub fn notes(trace: &Trace) -> Vec<(u64, ProcessId, String)> {
    trace
        .events
        .iter()
        .filter(|e| trace.is_correct(e.process))
        .filter_map(|e| match &e.kind {
            TraceKind::Diagnostic(d) => Some((e.time, e.process, d.clone())),
            _ => None,
        })
        .collect()
}

/// First time each correct process produced a note starting with `prefix`.
pub fn first_note(trace: &Trace, prefix: &str) -> BTreeMap<ProcessId, u64> {
    let mut out = BTreeMap::new();
    for (t, p, s) in notes(trace) {
        if s.starts_with(prefix) {
            out.entry(p).or_insert(t);
        }
    }
    out
}

pub const DELTA: u64 = 10;

/// Runs one probe per process with the last ⌊(n−1)/3⌋ processes faulty.
#[allow(clippy::too_many_arguments)]
pub fn run_probe(
    n: usize,
    gst: u64,
    seed: u64,
    strategy: Strategy,
    delay: DelayRule,
    proposals: BTreeMap<ProcessId, Value>,
    propose_at: BTreeMap<ProcessId, u64>,
    make: &dyn Fn() -> Probe,
) -> Trace {
    let t = (n - 1) / 3;
    let faulty: BTreeSet<ProcessId> = (n - t..n).map(|i| ProcessId(i as u16)).collect();
    let net = NetConfig {
        n,
        t,
        faulty: faulty.clone(),
        delta: DELTA,
        gst,
        seed,
        accounting: Accounting::Payload,
        width: ValueWidth::DEFAULT,
        validity: ValidityPredicate::Always,
        proposals,
        propose_at,
        max_time: gst + 10_000,
    };
    let adv = AdversarySpec {
        delay,
        drift: DriftRule::None,
        strategies: faulty.iter().map(|&p| (p, strategy.clone())).collect(),
    };
    simnet::run(&net, &adv, &|_| Box::new(make())).trace
}

/// The six faulty behaviours, with crash times relative to `gst`.
pub fn strategies(gst: u64) -> [Strategy; 6] {
    [
        Strategy::Silent,
        Strategy::Crash { at: gst / 2 + 37 },
        Strategy::Equivocate { values: [Value(2), Value(1_000_000)] },
        Strategy::Delayer,
        Strategy::Flood { period: 7 },
        Strategy::Random,
    ]
}
