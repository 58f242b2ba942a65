use std::any::Any;

use super::{Bundle, RoundMachine};
use crate::payload::{payload_bits, Accounting, InstancePath, Payload};
use crate::runtime::{Action, Automaton, Event, Indication, Request, TimerId};
use crate::types::{ProcessId, Value, ValueWidth};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SimConfig {
    /// R: simulated rounds.
    pub rounds: u32,
    /// Δ_sync: local duration of one simulated round.
    pub round_len: u64,
    /// Cumulative bit cap, 2B.
    pub cap_bits: u64,
    pub width: ValueWidth,
    /// Keep a per-round history for the equivalence oracle.
    pub record: bool,
    /// Negative control: tag everything with parity 0 and absorb every
    /// buffered message regardless of parity.
    pub mistag_parity: bool,
}

/// One simulated round as seen by the wrapped machine.
#[derive(Debug, Clone, PartialEq)]
pub struct RoundRecord<M> {
    pub round: u32,
    pub inbox: Vec<(ProcessId, Bundle)>,
    pub state: M,
}

/// Runs a lock-step machine in partial synchrony: each simulated round
/// lasts one local timer of Δ_sync, outbound bundles carry the round's
/// parity, and only buffered arrivals of matching parity are absorbed when
/// the round ends. Arrivals of the other parity wait for the next round.
pub struct CryptoFreeSim<M: RoundMachine> {
    cfg: SimConfig,
    make: Box<dyn Fn(Value) -> M>,
    machine: Option<M>,
    round: u32,
    sent_bits: u64,
    suppressed: u64,
    received: Vec<(ProcessId, bool, Bundle)>,
    finished: bool,
    abandoned: bool,
    history: Vec<RoundRecord<M>>,
}

impl<M: RoundMachine> CryptoFreeSim<M> {
    pub fn new(cfg: SimConfig, make: impl Fn(Value) -> M + 'static) -> CryptoFreeSim<M> {
        CryptoFreeSim {
            cfg,
            make: Box::new(make),
            machine: None,
            round: 0,
            sent_bits: 0,
            suppressed: 0,
            received: Vec::new(),
            finished: false,
            abandoned: false,
            history: Vec::new(),
        }
    }

    pub fn machine(&self) -> Option<&M> {
        self.machine.as_ref()
    }

    pub fn history(&self) -> &[RoundRecord<M>] {
        &self.history
    }

    pub fn sent_bits(&self) -> u64 {
        self.sent_bits
    }

    /// Bundles withheld by the bit cap.
    pub fn suppressed(&self) -> u64 {
        self.suppressed
    }

    fn parity(&self) -> bool {
        !self.cfg.mistag_parity && self.round % 2 == 1
    }

    fn timer(&self) -> TimerId {
        TimerId::local(self.round)
    }

    fn start_round(&mut self) -> Vec<Action> {
        let parity = self.parity();
        let round = self.round;
        let machine = self.machine.as_mut().expect("started");
        let mut out = Vec::new();
        for (to, inner) in machine.outbound(round) {
            if inner.is_empty() {
                continue;
            }
            let bits: u64 = inner.iter().map(|p| payload_bits(p, self.cfg.width, Accounting::Payload)).sum();
            if self.sent_bits + bits > self.cfg.cap_bits {
                self.suppressed += 1;
                continue;
            }
            self.sent_bits += bits;
            out.push(Action::Send { to, path: InstancePath::root(), payload: Payload::SyncRound { parity, inner } });
        }
        out.push(Action::SetTimer { id: self.timer(), after: self.cfg.round_len });
        out
    }

    fn end_round(&mut self) -> Vec<Action> {
        let parity = self.parity();
        let mistag = self.cfg.mistag_parity;
        let (mut inbox, rest): (Vec<_>, Vec<_>) =
            std::mem::take(&mut self.received).into_iter().partition(|(_, p, _)| mistag || *p == parity);
        self.received = rest;
        inbox.sort_by_key(|(from, _, _)| *from);
        let inbox: Vec<(ProcessId, Bundle)> = inbox.into_iter().map(|(f, _, b)| (f, b)).collect();
        let machine = self.machine.as_mut().expect("started");
        machine.absorb(self.round, &inbox);
        if self.cfg.record {
            self.history.push(RoundRecord { round: self.round, inbox, state: machine.clone() });
        }
        self.round += 1;
        if self.round > self.cfg.rounds {
            self.finish()
        } else {
            self.start_round()
        }
    }

    fn finish(&mut self) -> Vec<Action> {
        self.finished = true;
        self.received.clear();
        let d = self.machine.as_ref().and_then(|m| m.decision());
        vec![Action::Indicate(Indication::SimDecision(d))]
    }
}

impl<M: RoundMachine + 'static> Automaton for CryptoFreeSim<M> {
    fn step(&mut self, event: Event) -> Vec<Action> {
        if self.abandoned || self.finished {
            return vec![];
        }
        match event {
            Event::Request(Request::Propose(v)) if self.machine.is_none() => {
                self.machine = Some((self.make)(v));
                self.round = 1;
                if self.cfg.rounds == 0 {
                    self.finish()
                } else {
                    self.start_round()
                }
            }
            Event::Request(Request::Abandon) => {
                self.abandoned = true;
                self.received.clear();
                if self.machine.is_some() {
                    vec![Action::CancelTimer(self.timer())]
                } else {
                    vec![]
                }
            }
            Event::Timer(id) if self.machine.is_some() && id == self.timer() => self.end_round(),
            Event::Message { from, path, payload: Payload::SyncRound { parity, inner } }
                if path.is_root() =>
            {
                let p = Payload::SyncRound { parity, inner };
                if p.well_formed(self.cfg.width) {
                    let Payload::SyncRound { parity, inner } = p else { unreachable!() };
                    self.received.push((from, parity, inner));
                }
                vec![]
            }
            _ => vec![],
        }
    }

    fn as_any(&self) -> &dyn Any {
        self
    }
}
