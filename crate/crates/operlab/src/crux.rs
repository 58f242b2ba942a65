//! One view of the protocol: graded consensus, a simulated run of the
//! synchronous agreement, a second graded consensus and a validation
//! broadcast, with both timing gates per graded consensus step.

use std::any::Any;

use crate::graded_consensus::Gbca;
use crate::payload::{Segment, Tag};
use crate::runtime::{drain, mute, Action, Automaton, Children, Event, Indication, Outbox, Request, TimerId};
use crate::sync_ba::{self, CryptoFreeSim, SimConfig, SyncNode, L_GC};
use crate::types::{Grade, ProcessId, Quorum, ValidityPredicate, Value, ValueWidth};

const GC1: Segment = Segment::new(Tag::Gc1);
const GC2: Segment = Segment::new(Tag::Gc2);
const AS: Segment = Segment::new(Tag::As);
const VB: Segment = Segment::new(Tag::Vb);

const STEP1_TIMER: u32 = 1;
const STEP4_TIMER: u32 = 2;

/// Timing and size constants of one instance.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CruxParams {
    pub q: Quorum,
    pub delta: u64,
    pub delta_shift: u64,
    pub delta1: u64,
    pub delta2: u64,
    pub delta_sync: u64,
    /// R: rounds of the synchronous agreement.
    pub rounds: u32,
    /// B: its per-process bit budget.
    pub budget: u64,
    pub width: ValueWidth,
}

impl CruxParams {
    pub fn new(q: Quorum, delta: u64, delta_shift: u64, width: ValueWidth) -> CruxParams {
        assert!(delta > 0 && delta_shift > 0, "delays must be positive");
        let n = q.n;
        CruxParams {
            q,
            delta,
            delta_shift,
            delta1: L_GC as u64 * delta,
            delta2: L_GC as u64 * delta,
            delta_sync: delta_shift + delta,
            rounds: sync_ba::rounds(n),
            budget: sync_ba::budget(n, width.bits()),
            width,
        }
    }

    pub fn delta_total(&self) -> u64 {
        (self.delta_shift + self.delta1) + self.rounds as u64 * self.delta_sync + (self.delta_shift + self.delta2)
    }

    fn sim_config(&self) -> SimConfig {
        SimConfig {
            rounds: self.rounds,
            round_len: self.delta_sync,
            cap_bits: 2 * self.budget,
            width: self.width,
            record: false,
            mistag_parity: false,
        }
    }
}

/// The step-3 estimate.
pub fn est_rule(g1: Grade, v1: Value, va: Option<Value>, own: Value, validity: &ValidityPredicate) -> Value {
    if g1 == Grade::One {
        return v1;
    }
    match va {
        Some(v) if validity.valid(v) => v,
        _ => own,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Step {
    Idle,
    Gc1,
    Sim,
    Gc2,
    Vb,
    Done,
}

pub struct Crux {
    params: CruxParams,
    validity: ValidityPredicate,
    children: Children,
    step: Step,
    proposal: Option<Value>,
    timer_fired: [bool; 2],
    gc1: Option<(Value, Grade)>,
    est: Option<Value>,
    gc2: Option<(Value, Grade)>,
    decided: Option<Value>,
    abandoned: bool,
}

impl Crux {
    /// `me` identifies this process inside the simulated agreement; `def`
    /// is the default handed to the validation broadcast.
    pub fn new(me: ProcessId, params: CruxParams, validity: ValidityPredicate, def: Value) -> Crux {
        let q = params.q;
        let width = params.width;
        let n = q.n;
        let mut children = Children::new(0);
        let mut add = |seg, child: Box<dyn Automaton>| children.spawn(seg, child).expect("fresh child table");
        add(GC1, Box::new(Gbca::new(q, width, validity.clone())));
        add(GC2, Box::new(Gbca::new(q, width, validity.clone())));
        add(AS, Box::new(CryptoFreeSim::new(params.sim_config(), move |v| SyncNode::top(me, n, v, width))));
        add(VB, Box::new(crate::validation_broadcast::ValidationBroadcast::new(q, width, def)));
        Crux {
            params,
            validity,
            children,
            step: Step::Idle,
            proposal: None,
            timer_fired: [false; 2],
            gc1: None,
            est: None,
            gc2: None,
            decided: None,
            abandoned: false,
        }
    }

    pub fn params(&self) -> &CruxParams {
        &self.params
    }

    pub fn step_name(&self) -> Step {
        self.step
    }

    pub fn estimate(&self) -> Option<Value> {
        self.est
    }

    pub fn decided(&self) -> Option<Value> {
        self.decided
    }

    /// First graded consensus output.
    pub fn gc1(&self) -> Option<(Value, Grade)> {
        self.gc1
    }

    /// Second graded consensus output.
    pub fn gc2(&self) -> Option<(Value, Grade)> {
        self.gc2
    }

    pub fn abandoned(&self) -> bool {
        self.abandoned
    }

    pub fn sim(&self) -> Option<&CryptoFreeSim<SyncNode>> {
        self.children.downcast(AS)
    }

    fn set_timer(&mut self, key: u32, after: u64, out: &mut Outbox) {
        out.push(Action::SetTimer { id: TimerId::local(key), after });
    }

    /// Moves through every step whose gates are open.
    fn advance(&mut self, out: &mut Outbox) {
        loop {
            match self.step {
                Step::Gc1 if self.timer_fired[0] => {
                    let Some((v1, _)) = self.gc1 else { return };
                    self.step = Step::Sim;
                    out.absorb(self.children.request(AS, Request::Propose(v1)));
                }
                Step::Gc2 if self.timer_fired[1] => {
                    let Some((v2, g2)) = self.gc2 else { return };
                    if g2 == Grade::One {
                        self.decided = Some(v2);
                        out.indicate(Indication::Decide(v2));
                    }
                    self.step = Step::Vb;
                    out.absorb(self.children.request(VB, Request::Broadcast(v2)));
                }
                _ => return,
            }
        }
    }

    fn on_sim(&mut self, va: Option<Value>, out: &mut Outbox) {
        if self.step != Step::Sim {
            out.indicate(Indication::Diagnostic(format!("simulation output in step {:?}", self.step)));
            return;
        }
        let (v1, g1) = self.gc1.expect("step 1 done");
        let own = self.proposal.expect("proposed");
        let est = est_rule(g1, v1, va, own, &self.validity);
        self.est = Some(est);
        self.step = Step::Gc2;
        out.absorb(self.children.request(GC2, Request::Propose(est)));
        let after = self.params.delta_shift + self.params.delta2;
        self.set_timer(STEP4_TIMER, after, out);
        self.advance(out);
    }

    fn handle(&mut self, event: Event, out: &mut Outbox) {
        match event {
            Event::Request(Request::Propose(v)) => {
                if self.proposal.is_some() || self.abandoned {
                    return;
                }
                self.proposal = Some(v);
                self.step = Step::Gc1;
                out.absorb(self.children.request(GC1, Request::Propose(v)));
                let after = self.params.delta_shift + self.params.delta1;
                self.set_timer(STEP1_TIMER, after, out);
            }
            Event::Request(Request::Abandon) => {
                if self.abandoned {
                    return;
                }
                self.abandoned = true;
                for seg in [GC1, GC2, AS, VB] {
                    out.absorb(self.children.request(seg, Request::Abandon));
                }
                for (key, fired) in [(STEP1_TIMER, self.timer_fired[0]), (STEP4_TIMER, self.timer_fired[1])] {
                    let armed = match key {
                        STEP1_TIMER => self.step != Step::Idle,
                        _ => self.est.is_some(),
                    };
                    if armed && !fired {
                        out.push(Action::CancelTimer(TimerId::local(key)));
                    }
                }
            }
            Event::Request(_) => {}
            Event::Timer(id) if id.path.is_root() => {
                if self.abandoned {
                    return;
                }
                match id.key {
                    STEP1_TIMER => self.timer_fired[0] = true,
                    STEP4_TIMER => self.timer_fired[1] = true,
                    _ => return,
                }
                self.advance(out);
            }
            Event::Timer(id) => out.absorb(self.children.timer(id)),
            Event::Message { from, path, payload } => {
                out.absorb(self.children.deliver(from, &path, payload, |_| false));
            }
            Event::Child { from, indication } => {
                // Validations are relayed even after abandoning.
                if let Indication::Validate(v) = indication {
                    if from == VB {
                        out.indicate(Indication::Validate(v));
                    }
                    return;
                }
                if self.abandoned {
                    return;
                }
                match (from.tag, indication) {
                    (Tag::Gc1, Indication::Graded { value, grade, .. }) => {
                        self.gc1 = Some((value, grade));
                        self.advance(out);
                    }
                    (Tag::Gc2, Indication::Graded { value, grade, .. }) => {
                        self.gc2 = Some((value, grade));
                        self.advance(out);
                    }
                    (Tag::As, Indication::SimDecision(va)) => self.on_sim(va, out),
                    (Tag::Vb, Indication::Completed) => {
                        if self.step == Step::Vb {
                            self.step = Step::Done;
                            out.indicate(Indication::Completed);
                        }
                    }
                    (_, Indication::Diagnostic(d)) => out.indicate(Indication::Diagnostic(format!("{from}: {d}"))),
                    (_, other) => {
                        out.indicate(Indication::Diagnostic(format!("unexpected {} from {from}", other.name())))
                    }
                }
            }
        }
    }
}

impl Automaton for Crux {
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

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn total_duration_formula() {
        let p = CruxParams::new(Quorum::new(4, 1), 10, 20, ValueWidth::DEFAULT);
        assert_eq!(p.delta1, 70);
        assert_eq!(p.delta_sync, 30);
        assert_eq!(p.rounds, 48);
        assert_eq!(p.budget, 3120);
        assert_eq!(p.delta_total(), 90 + 48 * 30 + 90);
    }

    #[test]
    fn estimate_cascade() {
        let always = ValidityPredicate::Always;
        assert_eq!(est_rule(Grade::One, Value(7), Some(Value(9)), Value(5), &always), Value(7));
        assert_eq!(est_rule(Grade::Zero, Value(7), Some(Value(9)), Value(5), &always), Value(9));
        assert_eq!(est_rule(Grade::Zero, Value(7), None, Value(5), &always), Value(5));
        let even = ValidityPredicate::Modulo { divisor: 2, residue: 0 };
        assert_eq!(est_rule(Grade::Zero, Value(7), Some(Value(9)), Value(4), &even), Value(4));
    }

    #[test]
    fn propose_starts_step_one() {
        let p = CruxParams::new(Quorum::new(4, 1), 10, 20, ValueWidth::DEFAULT);
        let mut c = Crux::new(ProcessId(0), p, ValidityPredicate::Always, Value(7));
        let out = c.step(Event::Request(Request::Propose(Value(7))));
        assert!(out.iter().any(|a| matches!(a, Action::Broadcast { path, .. } if path.first() == Some(GC1))));
        assert!(out.contains(&Action::SetTimer { id: TimerId::local(STEP1_TIMER), after: 90 }));
        assert!(c.step(Event::Request(Request::Propose(Value(8)))).is_empty());
    }

    #[test]
    fn abandon_mutes_and_cancels() {
        let p = CruxParams::new(Quorum::new(4, 1), 10, 20, ValueWidth::DEFAULT);
        let mut c = Crux::new(ProcessId(0), p, ValidityPredicate::Always, Value(7));
        c.step(Event::Request(Request::Propose(Value(7))));
        let out = c.step(Event::Request(Request::Abandon));
        assert_eq!(out, vec![Action::CancelTimer(TimerId::local(STEP1_TIMER))]);
        assert!(c.step(Event::Request(Request::Propose(Value(7)))).is_empty());
    }
}
