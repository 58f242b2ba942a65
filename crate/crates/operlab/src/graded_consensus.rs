//! Asynchronous graded consensus: the five-stage echo cascade of graded
//! binding crusader agreement, extended to many values, with its three
//! grades folded into {0, 1}.
//!
//! Multi-valued inputs need more than the binary cascade: ⊥ is echoed once
//! t+1 senders have echoed without supporting the best-supported value, ⊥
//! is amplified and approved like a value, and "conflict" means two
//! approved entries or an approved ⊥. Without the ⊥ echo, inputs where no value has t+1 correct
//! supporters would leave every correct process waiting forever.

use std::any::Any;
use std::collections::BTreeSet;

use crate::payload::{Payload, Stage};
use crate::runtime::{Action, Automaton, Event, Indication, Request};
use crate::tally::Tally;
use crate::types::{Grade, ProcessId, Quorum, Slot, ValidityPredicate, Value, ValueWidth};

/// Terminal outcome of the cascade before grade mapping.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum GbcaOutcome {
    /// (v, 2)
    Strong(Value),
    /// (v, 1)
    Weak(Value),
    /// (⊥, 0)
    Bottom,
}

/// Folds a GBCA outcome into a graded consensus decision.
pub fn map_decision(outcome: GbcaOutcome, own: Value) -> (Value, Grade) {
    match outcome {
        GbcaOutcome::Strong(v) => (v, Grade::One),
        GbcaOutcome::Weak(v) => (v, Grade::Zero),
        GbcaOutcome::Bottom => (own, Grade::Zero),
    }
}

/// Index of the stage whose quorum a process is waiting for; `DONE` once it
/// has decided.
const DONE: Stage = 6;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Gbca {
    q: Quorum,
    width: ValueWidth,
    validity: ValidityPredicate,
    own: Option<Value>,
    abandoned: bool,
    echo_from: Tally<Slot>,
    echoed: BTreeSet<Slot>,
    approved: BTreeSet<Slot>,
    sent_echo2: bool,
    /// Per stage 2..=5: what each sender sent (first message wins).
    stage_from: [Tally<Slot>; 6],
    stage_senders: [BTreeSet<ProcessId>; 6],
    waiting: Stage,
    outcome: Option<GbcaOutcome>,
}

impl Gbca {
    pub fn new(q: Quorum, width: ValueWidth, validity: ValidityPredicate) -> Gbca {
        Gbca {
            q,
            width,
            validity,
            own: None,
            abandoned: false,
            echo_from: Tally::default(),
            echoed: BTreeSet::new(),
            approved: BTreeSet::new(),
            sent_echo2: false,
            stage_from: Default::default(),
            stage_senders: Default::default(),
            waiting: 2,
            outcome: None,
        }
    }

    pub fn outcome(&self) -> Option<GbcaOutcome> {
        self.outcome
    }

    pub fn decision(&self) -> Option<(Value, Grade)> {
        Some(map_decision(self.outcome?, self.own?))
    }

    pub fn proposed(&self) -> bool {
        self.own.is_some()
    }

    fn conflict(&self) -> bool {
        self.approved.len() > 1 || self.approved.contains(&Slot::Bot)
    }

    fn propose(&mut self, v: Value) -> Vec<Action> {
        if self.own.is_some() || self.abandoned {
            return vec![];
        }
        if !self.validity.valid(v) {
            return vec![Action::Indicate(Indication::Diagnostic(format!("rejected invalid proposal {v}")))];
        }
        self.own = Some(v);
        self.echoed.insert(Slot::Val(v));
        let mut out = vec![Action::broadcast(Payload::Echo(1, Slot::Val(v)))];
        out.extend(self.evaluate());
        out
    }

    fn record(&mut self, from: ProcessId, stage: Stage, x: Slot) -> bool {
        if stage == 1 {
            return self.echo_from.insert(x, from);
        }
        let k = stage as usize;
        if !self.stage_senders[k].insert(from) {
            return false;
        }
        self.stage_from[k].insert(x, from);
        true
    }

    /// Quorum rule shared by stages 2, 3 and 4: a non-⊥ value from n − t
    /// senders, else ⊥ once n − t senders are in and a conflict is known.
    fn stage_rule(&self, k: usize) -> Option<Slot> {
        let quorum = self.q.all_correct();
        let tally = &self.stage_from[k];
        if let Some(v) = tally.reaching(quorum).into_iter().find(|x| !x.is_bot()) {
            return Some(v);
        }
        (self.stage_senders[k].len() >= quorum && self.conflict()).then_some(Slot::Bot)
    }

    fn decision_rule(&self) -> Option<GbcaOutcome> {
        let quorum = self.q.all_correct();
        let e5 = &self.stage_from[5];
        if let Some(Slot::Val(v)) = e5.reaching(quorum).into_iter().find(|x| !x.is_bot()) {
            return Some(GbcaOutcome::Strong(v));
        }
        if !self.conflict() {
            return None;
        }
        if self.stage_senders[5].len() >= quorum {
            let weak = e5.iter().find_map(|(x, c)| match x {
                Slot::Val(w) if c >= 1 && self.stage_from[4].count(x) >= self.q.weak() => Some(w),
                _ => None,
            });
            if let Some(w) = weak {
                return Some(GbcaOutcome::Weak(w));
            }
        }
        (e5.count(Slot::Bot) >= quorum).then_some(GbcaOutcome::Bottom)
    }

    fn evaluate(&mut self) -> Vec<Action> {
        let mut out = Vec::new();
        if self.own.is_none() || self.abandoned {
            return out;
        }
        for x in self.echo_from.reaching(self.q.weak()) {
            if self.echoed.insert(x) {
                out.push(Action::broadcast(Payload::Echo(1, x)));
            }
        }
        // Senders outside the best-supported value; a sender counts once
        // however many values it echoed.
        let gap = self.echo_from.senders().len() - self.echo_from.max_count();
        if gap >= self.q.weak() && self.echoed.insert(Slot::Bot) {
            out.push(Action::broadcast(Payload::Echo(1, Slot::Bot)));
        }
        for x in self.echo_from.reaching(self.q.all_correct()) {
            if self.approved.insert(x) && !self.sent_echo2 {
                self.sent_echo2 = true;
                out.push(Action::broadcast(Payload::Echo(2, x)));
            }
        }
        while (2..=4).contains(&self.waiting) {
            let Some(x) = self.stage_rule(self.waiting as usize) else { break };
            self.waiting += 1;
            out.push(Action::broadcast(Payload::Echo(self.waiting, x)));
        }
        if self.waiting == 5 {
            if let Some(outcome) = self.decision_rule() {
                self.waiting = DONE;
                self.outcome = Some(outcome);
                let own = self.own.expect("proposed");
                let (value, grade) = map_decision(outcome, own);
                out.push(Action::Indicate(Indication::Graded { outcome, value, grade }));
            }
        }
        out
    }
}

impl Automaton for Gbca {
    fn step(&mut self, event: Event) -> Vec<Action> {
        match event {
            Event::Request(Request::Propose(v)) => self.propose(v),
            Event::Request(Request::Abandon) => {
                self.abandoned = true;
                vec![]
            }
            Event::Message { from, path, payload: Payload::Echo(stage, x) }
                if path.is_root() && (1..=5).contains(&stage) && x.value().is_none_or(|v| self.width.fits(v)) =>
            {
                if self.abandoned || !self.record(from, stage, x) {
                    return vec![];
                }
                self.evaluate()
            }
            _ => vec![],
        }
    }

    fn as_any(&self) -> &dyn Any {
        self
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gc(n: usize) -> Gbca {
        Gbca::new(Quorum::maximal(n), ValueWidth::DEFAULT, ValidityPredicate::Always)
    }

    fn msg(from: u16, stage: Stage, x: Slot) -> Event {
        Event::message(ProcessId(from), Payload::Echo(stage, x))
    }

    fn val(v: u64) -> Slot {
        Slot::Val(Value(v))
    }

    #[test]
    fn mapping_table() {
        assert_eq!(map_decision(GbcaOutcome::Strong(Value(7)), Value(5)), (Value(7), Grade::One));
        assert_eq!(map_decision(GbcaOutcome::Weak(Value(7)), Value(5)), (Value(7), Grade::Zero));
        assert_eq!(map_decision(GbcaOutcome::Bottom, Value(5)), (Value(5), Grade::Zero));
    }

    #[test]
    fn propose_echoes() {
        let mut g = gc(4);
        assert_eq!(g.step(Event::Request(Request::Propose(Value(7)))), vec![Action::broadcast(Payload::Echo(1, val(7)))]);
        assert!(g.step(Event::Request(Request::Propose(Value(8)))).is_empty());
    }

    #[test]
    fn propose_after_abandon_or_invalid() {
        let mut g = gc(4);
        g.step(Event::Request(Request::Abandon));
        assert!(g.step(Event::Request(Request::Propose(Value(7)))).is_empty());
        let mut g = Gbca::new(Quorum::maximal(4), ValueWidth::DEFAULT, ValidityPredicate::Modulo { divisor: 2, residue: 0 });
        let out = g.step(Event::Request(Request::Propose(Value(7))));
        assert!(matches!(out.as_slice(), [Action::Indicate(Indication::Diagnostic(_))]));
        assert!(!g.proposed());
    }

    #[test]
    fn unanimous_cascade_reaches_grade_two() {
        let mut g = gc(4);
        g.step(Event::Request(Request::Propose(Value(7))));
        for stage in 1..=5 {
            for from in 0..3 {
                g.step(msg(from, stage, val(7)));
            }
        }
        assert_eq!(g.outcome(), Some(GbcaOutcome::Strong(Value(7))));
        assert_eq!(g.decision(), Some((Value(7), Grade::One)));
    }

    #[test]
    fn duplicate_stage_message_ignored() {
        let mut g = gc(4);
        g.step(Event::Request(Request::Propose(Value(7))));
        g.step(msg(1, 3, val(7)));
        assert!(g.step(msg(1, 3, val(9))).is_empty());
        assert_eq!(g.stage_from[3].count(val(9)), 0);
    }

    #[test]
    fn bottom_echo_on_disagreement() {
        // n=4, t=1: echoes of 1 and 2 plus own 3 leave a gap of 2 ≥ t+1.
        let mut g = gc(4);
        g.step(Event::Request(Request::Propose(Value(3))));
        g.step(msg(0, 1, val(3)));
        g.step(msg(1, 1, val(1)));
        let out = g.step(msg(2, 1, val(2)));
        assert_eq!(out, vec![Action::broadcast(Payload::Echo(1, Slot::Bot))]);
    }

    #[test]
    fn one_sender_many_values_is_no_disagreement() {
        let mut g = gc(4);
        g.step(Event::Request(Request::Propose(Value(7))));
        g.step(msg(0, 1, val(7)));
        for v in 1..=5 {
            assert!(g.step(msg(3, 1, val(v))).is_empty());
        }
        assert!(!g.echoed.contains(&Slot::Bot));
    }

    #[test]
    fn silent_until_proposed() {
        let mut g = gc(4);
        assert!(g.step(msg(0, 1, val(3))).is_empty());
        assert!(g.step(msg(1, 1, val(3))).is_empty());
        let out = g.step(Event::Request(Request::Propose(Value(5))));
        assert_eq!(out, vec![Action::broadcast(Payload::Echo(1, val(5))), Action::broadcast(Payload::Echo(1, val(3)))]);
    }
}
