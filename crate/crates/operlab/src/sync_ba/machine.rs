use std::collections::BTreeSet;

use super::{rounds, Bundle, RoundMachine, L_GC};
use crate::graded_consensus::Gbca;
use crate::payload::{InstancePath, Payload};
use crate::runtime::{Action, Automaton, Event, Request};
use crate::tally::Tally;
use crate::types::{Grade, ProcessId, Quorum, ValidityPredicate, Value, ValueWidth};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Half {
    First,
    Second,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Phase {
    Gc(Half),
    Rec(Half),
    Report(Half),
    Done,
}

/// One process's view of SYNC(S): graded consensus on S, recursion into
/// the first half, a half-to-all report, then the same for the second
/// half. Non-members of a half idle through its rounds so that every
/// process of S follows the same round schedule.
#[derive(Debug, Clone, PartialEq)]
pub struct SyncNode {
    me: ProcessId,
    members: Vec<ProcessId>,
    width: ValueWidth,
    value: Value,
    grade: Grade,
    phase: Phase,
    elapsed: u32,
    gc: Option<Gbca>,
    child: Option<Box<SyncNode>>,
    reporters: BTreeSet<ProcessId>,
    reports: Tally<Value>,
    pending: Bundle,
    decided: Option<Value>,
}

impl SyncNode {
    /// `members` must be sorted and contain `me`.
    pub fn new(me: ProcessId, members: Vec<ProcessId>, value: Value, width: ValueWidth) -> SyncNode {
        debug_assert!(members.windows(2).all(|w| w[0] < w[1]) && members.contains(&me));
        let mut node = SyncNode {
            me,
            members,
            width,
            value,
            grade: Grade::Zero,
            phase: Phase::Done,
            elapsed: 0,
            gc: None,
            child: None,
            reporters: BTreeSet::new(),
            reports: Tally::default(),
            pending: Vec::new(),
            decided: None,
        };
        if node.members.len() <= 1 {
            node.decided = Some(value);
        } else {
            node.enter(Phase::Gc(Half::First));
        }
        node
    }

    /// Instance over all `n` processes.
    pub fn top(me: ProcessId, n: usize, value: Value, width: ValueWidth) -> SyncNode {
        SyncNode::new(me, ProcessId::all(n).collect(), value, width)
    }

    pub fn current(&self) -> Value {
        self.value
    }

    fn half(&self, h: Half) -> &[ProcessId] {
        let split = self.members.len().div_ceil(2);
        match h {
            Half::First => &self.members[..split],
            Half::Second => &self.members[split..],
        }
    }

    fn phase_len(&self, phase: Phase) -> u32 {
        match phase {
            Phase::Gc(_) => L_GC,
            Phase::Rec(h) => rounds(self.half(h).len()),
            Phase::Report(_) => 1,
            Phase::Done => 0,
        }
    }

    fn enter(&mut self, phase: Phase) {
        self.phase = phase;
        self.elapsed = 0;
        self.pending.clear();
        self.gc = None;
        match phase {
            Phase::Gc(_) => {
                let n = self.members.len();
                let mut gc = Gbca::new(Quorum::maximal(n), self.width, ValidityPredicate::Always);
                let actions = gc.step(Event::Request(Request::Propose(self.value)));
                self.collect(actions);
                self.gc = Some(gc);
            }
            Phase::Rec(h) => {
                let half = self.half(h).to_vec();
                self.child = half.contains(&self.me).then(|| Box::new(SyncNode::new(self.me, half, self.value, self.width)));
                if self.phase_len(phase) == 0 {
                    self.enter(Phase::Report(h));
                }
            }
            Phase::Report(_) => {
                self.reporters.clear();
                self.reports = Tally::default();
            }
            Phase::Done => self.decided = Some(self.value),
        }
    }

    fn collect(&mut self, actions: Vec<Action>) {
        for a in actions {
            if let Action::Broadcast { payload, .. } = a {
                self.pending.push(payload);
            }
        }
    }

    fn finish_phase(&mut self) {
        match self.phase {
            Phase::Gc(h) => {
                let gc = self.gc.as_ref().expect("gc phase");
                let (v, g) = gc.decision().unwrap_or((self.value, Grade::Zero));
                self.value = v;
                self.grade = g;
                self.enter(Phase::Rec(h));
            }
            Phase::Rec(h) => self.enter(Phase::Report(h)),
            Phase::Report(h) => {
                let majority = self.half(h).len() / 2 + 1;
                if let Some(&b) = self.reports.reaching(majority).first() {
                    if self.grade == Grade::Zero {
                        self.value = b;
                    }
                }
                self.child = None;
                match h {
                    Half::First => self.enter(Phase::Gc(Half::Second)),
                    Half::Second => self.enter(Phase::Done),
                }
            }
            Phase::Done => {}
        }
    }
}

#[allow(clippy::only_used_in_recursion)]
impl RoundMachine for SyncNode {
    fn outbound(&mut self, round: u32) -> Vec<(ProcessId, Bundle)> {
        match self.phase {
            Phase::Gc(_) => {
                // Messages sent in the last round of the phase could only
                // matter to a decision at its very end; the cascade decides
                // a round earlier, so the last round is receive-only.
                if self.pending.is_empty() || self.elapsed + 1 == L_GC {
                    self.pending.clear();
                    return vec![];
                }
                let bundle = std::mem::take(&mut self.pending);
                self.members.iter().map(|&m| (m, bundle.clone())).collect()
            }
            Phase::Rec(_) => self.child.as_mut().map_or_else(Vec::new, |c| c.outbound(round)),
            Phase::Report(h) => {
                if !self.half(h).contains(&self.me) {
                    return vec![];
                }
                let d = self.child.as_ref().and_then(|c| c.decision()).expect("half decided");
                self.members.iter().map(|&m| (m, vec![Payload::HalfReport(d)])).collect()
            }
            Phase::Done => vec![],
        }
    }

    fn absorb(&mut self, round: u32, inbox: &[(ProcessId, Bundle)]) {
        match self.phase {
            Phase::Gc(_) => {
                let mut actions = Vec::new();
                let gc = self.gc.as_mut().expect("gc phase");
                for (from, bundle) in inbox {
                    if self.members.binary_search(from).is_err() {
                        continue;
                    }
                    for p in bundle {
                        if matches!(p, Payload::Echo(..)) {
                            actions.extend(gc.step(Event::Message {
                                from: *from,
                                path: InstancePath::root(),
                                payload: p.clone(),
                            }));
                        }
                    }
                }
                self.collect(actions);
            }
            Phase::Rec(_) => {
                if let Some(c) = self.child.as_mut() {
                    c.absorb(round, inbox);
                }
            }
            Phase::Report(h) => {
                let half: Vec<ProcessId> = self.half(h).to_vec();
                for (from, bundle) in inbox {
                    if !half.contains(from) {
                        continue;
                    }
                    if let Some(Payload::HalfReport(v)) = bundle.iter().find(|p| matches!(p, Payload::HalfReport(_))) {
                        if self.width.fits(*v) && self.reporters.insert(*from) {
                            self.reports.insert(*v, *from);
                        }
                    }
                }
            }
            Phase::Done => return,
        }
        self.elapsed += 1;
        if self.elapsed >= self.phase_len(self.phase) {
            self.finish_phase();
        }
    }

    fn decision(&self) -> Option<Value> {
        self.decided
    }
}

/// A single graded consensus run in lock-step, for latency and message
/// measurements.
#[derive(Debug, Clone, PartialEq)]
pub struct GcMachine {
    members: Vec<ProcessId>,
    gc: Gbca,
    pending: Bundle,
    decided_round: Option<u32>,
    send_rounds: u32,
}

impl GcMachine {
    pub fn new(members: Vec<ProcessId>, input: Value, width: ValueWidth) -> GcMachine {
        let mut gc = Gbca::new(Quorum::maximal(members.len()), width, ValidityPredicate::Always);
        let pending = broadcasts(gc.step(Event::Request(Request::Propose(input))));
        GcMachine { members, gc, pending, decided_round: None, send_rounds: 0 }
    }

    pub fn gbca(&self) -> &Gbca {
        &self.gc
    }

    /// Round at whose end the cascade decided.
    pub fn decided_round(&self) -> Option<u32> {
        self.decided_round
    }

    /// Rounds in which this process sent anything.
    pub fn send_rounds(&self) -> u32 {
        self.send_rounds
    }
}

fn broadcasts(actions: Vec<Action>) -> Bundle {
    actions
        .into_iter()
        .filter_map(|a| match a {
            Action::Broadcast { payload, .. } => Some(payload),
            _ => None,
        })
        .collect()
}

impl RoundMachine for GcMachine {
    fn outbound(&mut self, _: u32) -> Vec<(ProcessId, Bundle)> {
        if self.pending.is_empty() {
            return vec![];
        }
        self.send_rounds += 1;
        let bundle = std::mem::take(&mut self.pending);
        self.members.iter().map(|&m| (m, bundle.clone())).collect()
    }

    fn absorb(&mut self, round: u32, inbox: &[(ProcessId, Bundle)]) {
        for (from, bundle) in inbox {
            for p in bundle {
                let actions = self.gc.step(Event::Message { from: *from, path: InstancePath::root(), payload: p.clone() });
                self.pending.extend(broadcasts(actions));
            }
        }
        if self.decided_round.is_none() && self.gc.outcome().is_some() {
            self.decided_round = Some(round);
        }
    }

    fn decision(&self) -> Option<Value> {
        self.gc.decision().map(|(v, _)| v)
    }
}
