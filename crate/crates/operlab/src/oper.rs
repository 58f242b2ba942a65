//! The top-level view loop: one CRUX instance per view, START-VIEW
//! synchronization, safe-skip entry through validated values, and the
//! finisher-mediated decision and halt.

use std::any::Any;
use std::collections::{BTreeMap, BTreeSet};

use crate::crux::{Crux, CruxParams};
use crate::finisher::Finisher;
use crate::payload::{Payload, Segment, Tag};
use crate::runtime::{drain, Action, Automaton, Children, Event, Indication, Outbox, Request};
use crate::types::{ProcessId, ValidityPredicate, Value, View};

const FIN: Segment = Segment::new(Tag::Fin);

pub struct Oper {
    me: ProcessId,
    params: CruxParams,
    validity: ValidityPredicate,
    children: Children,
    proposal: Option<Value>,
    view: View,
    helped: BTreeSet<View>,
    start_view_from: BTreeMap<View, BTreeSet<ProcessId>>,
    start_view_sent: BTreeMap<View, u8>,
    /// Target of a quorum-triggered entry still waiting for a validated
    /// value from the preceding instance.
    pending_target: Option<View>,
    validated: BTreeMap<View, Value>,
    /// Highest view some correct process is known to have reached.
    credible: View,
    decided: Option<Value>,
    halted: bool,
}

impl Oper {
    pub fn new(me: ProcessId, params: CruxParams, validity: ValidityPredicate) -> Oper {
        let mut children = Children::new(Children::default_cap(params.q.n));
        children
            .spawn(FIN, Box::new(Finisher::new(params.q, params.width)))
            .expect("fresh child table");
        Oper {
            me,
            params,
            validity,
            children,
            proposal: None,
            view: View::FIRST,
            helped: BTreeSet::new(),
            start_view_from: BTreeMap::new(),
            start_view_sent: BTreeMap::new(),
            pending_target: None,
            validated: BTreeMap::new(),
            credible: View::FIRST,
            decided: None,
            halted: false,
        }
    }

    pub fn view(&self) -> View {
        self.view
    }

    pub fn decided(&self) -> Option<Value> {
        self.decided
    }

    pub fn pending_target(&self) -> Option<View> {
        self.pending_target
    }

    /// START-VIEW broadcasts this process made, per view.
    pub fn start_view_sent(&self) -> &BTreeMap<View, u8> {
        &self.start_view_sent
    }

    pub fn crux(&self, v: View) -> Option<&Crux> {
        self.children.downcast(Segment::crux(v))
    }

    fn ensure(&mut self, v: View, out: &mut Outbox) {
        let seg = Segment::crux(v);
        if self.children.contains(seg) {
            return;
        }
        let def = self.proposal.expect("proposed before instances exist");
        let crux = Crux::new(self.me, self.params, self.validity.clone(), def);
        out.absorb(self.children.spawn(seg, Box::new(crux)).expect("checked absent"));
    }

    fn broadcast_start_view(&mut self, v: View, out: &mut Outbox) {
        *self.start_view_sent.entry(v).or_default() += 1;
        out.push(Action::broadcast(Payload::StartView(v)));
    }

    fn supporters(&self, v: View) -> usize {
        self.start_view_from.get(&v).map_or(0, |s| s.len())
    }

    /// Re-evaluates the START-VIEW rules and any pending entry.
    fn evaluate(&mut self, out: &mut Outbox) {
        let weak = self.params.q.weak();
        let strong = self.params.q.strong();
        let views: Vec<View> = self.start_view_from.keys().copied().collect();
        for v in views {
            let support = self.supporters(v);
            if support >= weak {
                if self.helped.insert(v) {
                    self.broadcast_start_view(v, out);
                }
                if v > self.credible {
                    self.credible = v;
                }
            }
            if support >= strong && v > self.view && self.pending_target.is_none_or(|p| v > p) {
                self.pending_target = Some(v);
            }
        }
        // Instances some correct process has entered run passively so
        // their validations are available when needed.
        let credible = self.credible.number();
        for k in 1..=credible + 1 {
            let v = View::new(k).expect("k ≥ 1");
            if k <= credible || self.children.buffered(Segment::crux(v)) > 0 {
                self.ensure(v, out);
            }
        }
        self.try_enter(out);
    }

    fn try_enter(&mut self, out: &mut Outbox) {
        let Some(target) = self.pending_target else { return };
        if target <= self.view {
            self.pending_target = None;
            return;
        }
        let prev = target.prev().expect("target > 1");
        self.ensure(prev, out);
        let Some(&v) = self.validated.get(&prev) else { return };
        out.absorb(self.children.request(Segment::crux(self.view), Request::Abandon));
        self.ensure(target, out);
        self.view = target;
        self.credible = self.credible.max(target);
        self.pending_target = None;
        out.indicate(Indication::EnteredView(target));
        out.absorb(self.children.request(Segment::crux(target), Request::Propose(v)));
        // A quorum for a later view may already be in.
        let strong = self.params.q.strong();
        self.pending_target =
            self.start_view_from.iter().rev().find(|(v, s)| **v > target && s.len() >= strong).map(|(v, _)| *v);
        self.try_enter(out);
    }

    fn on_child(&mut self, from: Segment, indication: Indication, out: &mut Outbox) {
        if from == FIN {
            if let Indication::Finish(v) = indication {
                self.decided = Some(v);
                out.indicate(Indication::Decide(v));
                out.absorb(self.children.request(Segment::crux(self.view), Request::Abandon));
                self.halted = true;
                out.push(Action::Halt);
            }
            return;
        }
        let Some(view) = View::new(from.index).filter(|_| from.tag == Tag::Crux) else { return };
        match indication {
            Indication::Validate(v) => {
                self.validated.insert(view, v);
                self.try_enter(out);
            }
            Indication::Completed if view == self.view => {
                self.broadcast_start_view(view.next(), out);
            }
            Indication::Decide(v) if view == self.view => {
                out.absorb(self.children.request(FIN, Request::ToFinish(v)));
            }
            Indication::Diagnostic(d) => out.indicate(Indication::Diagnostic(format!("{from}/{d}"))),
            _ => {}
        }
    }

    fn handle(&mut self, event: Event, out: &mut Outbox) {
        if self.halted {
            return;
        }
        match event {
            Event::Request(Request::Propose(v)) => {
                if self.proposal.is_some() {
                    return;
                }
                self.proposal = Some(v);
                self.ensure(View::FIRST, out);
                out.indicate(Indication::EnteredView(View::FIRST));
                out.absorb(self.children.request(Segment::crux(View::FIRST), Request::Propose(v)));
                self.evaluate(out);
            }
            Event::Request(_) => {}
            Event::Timer(id) => out.absorb(self.children.timer(id)),
            Event::Message { from, path, payload } => {
                if path.is_root() {
                    if let Payload::StartView(v) = payload {
                        if v > View::FIRST
                            && self.start_view_from.entry(v).or_default().insert(from)
                            && self.proposal.is_some()
                        {
                            self.evaluate(out);
                        }
                    }
                    return;
                }
                let proposed = self.proposal.is_some();
                out.absorb(self.children.deliver(from, &path, payload, |seg| seg.tag == Tag::Crux && seg.index >= 1));
                // Instances are created only after proposing; until then
                // everything for them stays buffered.
                if !proposed {
                    return;
                }
                if let Some(seg) = path.first() {
                    if seg.tag == Tag::Crux && seg.index >= 1 && seg.index <= self.credible.number() + 1 {
                        self.ensure(View::new(seg.index).expect("index ≥ 1"), out);
                    }
                }
            }
            Event::Child { from, indication } => self.on_child(from, indication, out),
        }
    }
}

impl Automaton for Oper {
    fn step(&mut self, event: Event) -> Vec<Action> {
        if self.halted {
            return vec![];
        }
        drain(event, |ev, out| self.handle(ev, out))
    }

    fn halted(&self) -> bool {
        self.halted
    }

    fn misrouted(&self) -> u64 {
        self.children.misrouted()
    }

    fn as_any(&self) -> &dyn Any {
        self
    }
}
