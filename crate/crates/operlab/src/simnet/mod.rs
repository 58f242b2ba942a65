//! Deterministic discrete-event simulation of the partially synchronous
//! model: one virtual clock, a GST, adversarial delays and clock drift
//! before it, and Byzantine processes driven by strategies.

mod adversary;
mod trace;

pub use adversary::{DelayRule, DriftRule, Strategy};
pub use trace::{Metrics, Trace, TraceEvent, TraceKind};

use std::collections::{BTreeMap, BTreeSet};

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::payload::{envelope_bits, Accounting, InstancePath, Payload, Segment, Tag};
use crate::runtime::{Action, Automaton, Event, Indication, Request, TimerId};
use crate::types::{ProcessId, Slot, ValidityPredicate, Value, ValueWidth, View};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NetConfig {
    pub n: usize,
    pub t: usize,
    pub faulty: BTreeSet<ProcessId>,
    /// δ in ticks.
    pub delta: u64,
    pub gst: u64,
    pub seed: u64,
    pub accounting: Accounting,
    pub width: ValueWidth,
    pub validity: ValidityPredicate,
    /// Input of every process; faulty processes that run the protocol use
    /// theirs too.
    pub proposals: BTreeMap<ProcessId, Value>,
    /// Proposal times; absent processes propose at 0.
    pub propose_at: BTreeMap<ProcessId, u64>,
    /// Virtual time after which the run is cut off.
    pub max_time: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ConfigError {
    #[error("n ≥ 3t+1 violated: n={n}, t={t}")]
    Resilience { n: usize, t: usize },
    #[error("{faulty} faulty processes exceed t={t}")]
    TooManyFaulty { faulty: usize, t: usize },
    #[error("process {0} is outside 0..n")]
    UnknownProcess(ProcessId),
    #[error("no proposal for process {0}")]
    MissingProposal(ProcessId),
    #[error("proposal {value} of correct process {process} is invalid or too wide")]
    InvalidProposal { process: ProcessId, value: Value },
    #[error("delta must be positive")]
    ZeroDelta,
}

impl NetConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        let (n, t) = (self.n, self.t);
        if n == 0 || n < 3 * t + 1 {
            return Err(ConfigError::Resilience { n, t });
        }
        if self.faulty.len() > t {
            return Err(ConfigError::TooManyFaulty { faulty: self.faulty.len(), t });
        }
        if self.delta == 0 {
            return Err(ConfigError::ZeroDelta);
        }
        let ids = self.faulty.iter().chain(self.proposals.keys()).chain(self.propose_at.keys());
        if let Some(&p) = ids.into_iter().find(|p| p.index() >= n) {
            return Err(ConfigError::UnknownProcess(p));
        }
        for p in ProcessId::all(n) {
            let Some(&v) = self.proposals.get(&p) else {
                return Err(ConfigError::MissingProposal(p));
            };
            if !self.faulty.contains(&p) && !(self.validity.valid(v) && self.width.fits(v)) {
                return Err(ConfigError::InvalidProposal { process: p, value: v });
            }
        }
        Ok(())
    }

    pub fn correct(&self) -> Vec<ProcessId> {
        ProcessId::all(self.n).filter(|p| !self.faulty.contains(p)).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct AdversarySpec {
    pub delay: DelayRule,
    pub drift: DriftRule,
    /// Faulty processes without an entry stay silent.
    pub strategies: BTreeMap<ProcessId, Strategy>,
}

/// A finished run: the trace and every process's final automaton.
pub struct Run {
    pub trace: Trace,
    pub processes: BTreeMap<ProcessId, Box<dyn Automaton>>,
}

/// Delivery time for a message sent at `now`, within the model's bound.
pub fn schedule_delivery(
    rule: &DelayRule,
    now: u64,
    from: ProcessId,
    to: ProcessId,
    gst: u64,
    delta: u64,
    rng: &mut ChaCha8Rng,
) -> u64 {
    rule.deliver_at(now, from, to, gst, delta, rng)
}

/// Fire time of a timer of duration `after` set at `now`.
pub fn schedule_timer(rule: &DriftRule, now: u64, after: u64, gst: u64, rng: &mut ChaCha8Rng) -> u64 {
    rule.fire_at(now, after, gst, rng)
}

#[derive(Debug, Clone)]
enum Pending {
    Deliver { from: ProcessId, path: InstancePath, payload: Payload },
    Timer(TimerId),
    Propose(Value),
    FloodTick,
}

impl Pending {
    /// Arrivals and proposals go before timers at equal times.
    fn class(&self) -> u8 {
        match self {
            Pending::Deliver { .. } | Pending::Propose(_) => 0,
            Pending::Timer(_) | Pending::FloodTick => 1,
        }
    }
}

struct Sim<'a> {
    cfg: &'a NetConfig,
    adv: &'a AdversarySpec,
    rng: ChaCha8Rng,
    queue: BTreeMap<(u64, u8, u64), (ProcessId, Pending)>,
    seq: u64,
    timers: BTreeMap<(ProcessId, TimerId), u64>,
    procs: BTreeMap<ProcessId, Box<dyn Automaton>>,
    events: Vec<TraceEvent>,
    decided: BTreeSet<ProcessId>,
    max_view: u64,
}

impl Sim<'_> {
    fn push(&mut self, at: u64, target: ProcessId, item: Pending) -> u64 {
        self.seq += 1;
        self.queue.insert((at, item.class(), self.seq), (target, item));
        self.seq
    }

    fn log(&mut self, time: u64, process: ProcessId, kind: TraceKind) {
        self.events.push(TraceEvent { time, process, kind });
    }

    fn strategy(&self, p: ProcessId) -> Option<&Strategy> {
        if self.cfg.faulty.contains(&p) {
            Some(self.adv.strategies.get(&p).unwrap_or(&Strategy::Silent))
        } else {
            None
        }
    }

    fn send_copy(&mut self, now: u64, from: ProcessId, to: ProcessId, path: InstancePath, payload: Payload) {
        let mut payload = payload;
        let mut deliver_at = None;
        match self.strategy(from).cloned() {
            Some(Strategy::Equivocate { values }) => {
                let v = values[to.index() % 2];
                payload = payload.map_values(&mut |_| v);
            }
            Some(Strategy::Delayer) => deliver_at = Some(now.max(self.cfg.gst) + self.cfg.delta),
            Some(Strategy::Random) => {
                let r: f64 = self.rng.gen();
                if r < 0.2 {
                    return;
                }
                if r < 0.45 {
                    let width = self.cfg.width;
                    let rng = &mut self.rng;
                    payload = payload.map_values(&mut |v| {
                        if rng.gen_bool(0.5) {
                            width.clamp(v.0 ^ 1)
                        } else {
                            Value(rng.gen_range(0..4))
                        }
                    });
                }
            }
            _ => {}
        }
        let (gst, delta) = (self.cfg.gst, self.cfg.delta);
        let at = match deliver_at {
            Some(at) => at,
            None => schedule_delivery(&self.adv.delay, now, from, to, gst, delta, &mut self.rng),
        };
        let bits = envelope_bits(&path, &payload, self.cfg.width, self.cfg.accounting);
        self.log(
            now,
            from,
            TraceKind::Send { to, path: path.clone(), payload: payload.clone(), bits, deliver_at: at },
        );
        self.push(at, to, Pending::Deliver { from, path, payload });
    }

    fn apply(&mut self, now: u64, p: ProcessId, actions: Vec<Action>) {
        for a in actions {
            match a {
                Action::Send { to, path, payload } => {
                    if to.index() < self.cfg.n {
                        self.send_copy(now, p, to, path, payload);
                    }
                }
                Action::Broadcast { path, payload } => {
                    for to in ProcessId::all(self.cfg.n) {
                        self.send_copy(now, p, to, path.clone(), payload.clone());
                    }
                }
                Action::SetTimer { id, after } => {
                    let at = schedule_timer(&self.adv.drift, now, after, self.cfg.gst, &mut self.rng);
                    let seq = self.push(at, p, Pending::Timer(id.clone()));
                    self.timers.insert((p, id), seq);
                }
                Action::CancelTimer(id) => {
                    self.timers.remove(&(p, id));
                }
                Action::Indicate(Indication::Decide(v)) => {
                    self.decided.insert(p);
                    self.log(now, p, TraceKind::Decide(v));
                }
                Action::Indicate(Indication::EnteredView(v)) => {
                    if !self.cfg.faulty.contains(&p) {
                        self.max_view = self.max_view.max(v.number());
                    }
                    self.log(now, p, TraceKind::Enter(v));
                }
                Action::Indicate(Indication::Diagnostic(d)) => self.log(now, p, TraceKind::Diagnostic(d)),
                Action::Indicate(_) => {}
                Action::Halt => self.log(now, p, TraceKind::Halt),
            }
        }
    }

    fn flood(&mut self, now: u64, p: ProcessId, period: u64) {
        let pool: Vec<Value> = {
            let mut s: BTreeSet<Value> = self.cfg.proposals.values().copied().collect();
            s.extend([Value(0), Value(1)]);
            s.into_iter().collect()
        };
        let rng = &mut self.rng;
        let v = pool[rng.gen_range(0..pool.len())];
        let slot = if rng.gen_bool(0.2) { Slot::Bot } else { Slot::Val(v) };
        let view = View::new(rng.gen_range(1..=self.max_view.max(1) + 1)).expect("≥ 1");
        let crux = Segment::crux(view);
        let at = |segs: &[Segment]| InstancePath::from_segments(segs.to_vec());
        let (path, payload) = match rng.gen_range(0..7) {
            0 => (InstancePath::root(), Payload::StartView(view.next())),
            1 => (at(&[crux, Segment::new(Tag::Gc1)]), Payload::Echo(rng.gen_range(1..=5), slot)),
            2 => (at(&[crux, Segment::new(Tag::Gc2)]), Payload::Echo(rng.gen_range(1..=5), slot)),
            3 => (at(&[crux, Segment::new(Tag::Vb)]), Payload::Init(slot)),
            4 => (at(&[crux, Segment::new(Tag::Vb), Segment::new(Tag::Rb)]), Payload::Echo(1, slot)),
            5 => {
                let len = rng.gen_range(1..=3);
                let inner = (0..len).map(|_| crate::sync_ba::random_inner(rng, &pool)).collect();
                (at(&[crux, Segment::new(Tag::As)]), Payload::SyncRound { parity: rng.gen_bool(0.5), inner })
            }
            _ => (at(&[Segment::new(Tag::Fin)]), Payload::Finish(v)),
        };
        for to in ProcessId::all(self.cfg.n) {
            self.send_copy(now, p, to, path.clone(), payload.clone());
        }
        if now + period < self.cfg.gst {
            self.push(now + period, p, Pending::FloodTick);
        }
    }

    fn all_correct_halted(&self) -> bool {
        self.cfg.correct().iter().all(|p| self.procs.get(p).is_some_and(|a| a.halted()))
    }

    fn run(&mut self) -> u64 {
        let mut now = 0;
        while let Some((&key, _)) = self.queue.first_key_value() {
            if key.0 > self.cfg.max_time {
                break;
            }
            let (target, item) = self.queue.remove(&key).expect("present");
            now = key.0;
            let strategy = self.strategy(target).cloned();
            if let Some(Strategy::Crash { at }) = strategy {
                if now >= at {
                    continue;
                }
            }
            let event = match item {
                Pending::FloodTick => {
                    if let Some(Strategy::Flood { period }) = strategy {
                        self.flood(now, target, period.max(1));
                    }
                    continue;
                }
                Pending::Timer(id) => {
                    if self.timers.get(&(target, id.clone())) != Some(&key.2) {
                        continue;
                    }
                    self.timers.remove(&(target, id.clone()));
                    Event::Timer(id)
                }
                Pending::Deliver { from, path, payload } => Event::Message { from, path, payload },
                Pending::Propose(v) => Event::Request(Request::Propose(v)),
            };
            let Some(auto) = self.procs.get_mut(&target) else { continue };
            if auto.halted() {
                continue;
            }
            let logged = match &event {
                Event::Timer(id) => TraceKind::Timer(id.clone()),
                Event::Message { from, path, payload } => {
                    TraceKind::Recv { from: *from, path: path.clone(), payload: payload.clone() }
                }
                Event::Request(Request::Propose(v)) => TraceKind::Propose(*v),
                _ => unreachable!("only queued kinds"),
            };
            let actions = auto.step(event);
            self.log(now, target, logged);
            self.apply(now, target, actions);
            if self.all_correct_halted() {
                break;
            }
        }
        now
    }
}

/// Runs one execution. `factory` builds the automaton of every process
/// that runs the protocol, faulty ones included.
pub fn run(cfg: &NetConfig, adv: &AdversarySpec, factory: &dyn Fn(ProcessId) -> Box<dyn Automaton>) -> Run {
    let mut sim = Sim {
        cfg,
        adv,
        rng: ChaCha8Rng::seed_from_u64(cfg.seed),
        queue: BTreeMap::new(),
        seq: 0,
        timers: BTreeMap::new(),
        procs: BTreeMap::new(),
        events: Vec::new(),
        decided: BTreeSet::new(),
        max_view: 1,
    };
    for p in ProcessId::all(cfg.n) {
        match sim.strategy(p).cloned() {
            Some(Strategy::Flood { .. }) => {
                if cfg.gst > 0 {
                    sim.push(0, p, Pending::FloodTick);
                }
            }
            Some(s) if !s.runs_protocol() => {}
            _ => {
                sim.procs.insert(p, factory(p));
                let at = cfg.propose_at.get(&p).copied().unwrap_or(0);
                sim.push(at, p, Pending::Propose(cfg.proposals[&p]));
            }
        }
    }
    let end_time = sim.run();
    let correct = cfg.correct();
    let terminated = correct.iter().all(|p| sim.decided.contains(p));
    let misrouted = correct.iter().filter_map(|p| sim.procs.get(p)).map(|a| a.misrouted()).sum();
    Run {
        trace: Trace {
            n: cfg.n,
            t: cfg.t,
            gst: cfg.gst,
            delta: cfg.delta,
            seed: cfg.seed,
            correct,
            events: sim.events,
            terminated,
            end_time,
            misrouted,
        },
        processes: sim.procs,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(1)
    }

    #[test]
    fn delivery_bounds() {
        let (a, b) = (ProcessId(0), ProcessId(1));
        assert_eq!(schedule_delivery(&DelayRule::Max, 0, a, b, 10, 2, &mut rng()), 12);
        assert_eq!(schedule_delivery(&DelayRule::Max, 0, a, b, 0, 2, &mut rng()), 2);
        let mut r = rng();
        for _ in 0..100 {
            let at = schedule_delivery(&DelayRule::Uniform, 13, a, b, 10, 2, &mut r);
            assert!((13..=15).contains(&at));
        }
        assert_eq!(schedule_delivery(&DelayRule::Fixed { ticks: 50 }, 13, a, b, 10, 2, &mut rng()), 15);
    }

    #[test]
    fn timers_drift_only_before_gst() {
        for rule in [DriftRule::None, DriftRule::Uniform, DriftRule::Late, DriftRule::Early] {
            assert_eq!(schedule_timer(&rule, 101, 5, 100, &mut rng()), 106);
            let mut r = rng();
            for _ in 0..50 {
                let at = schedule_timer(&rule, 0, 5, 100, &mut r);
                assert!(at > 0 && at <= 105, "{rule:?} {at}");
            }
        }
    }

    #[test]
    fn resilience_is_checked() {
        let cfg = NetConfig {
            n: 3,
            t: 1,
            faulty: BTreeSet::new(),
            delta: 10,
            gst: 0,
            seed: 0,
            accounting: Accounting::Payload,
            width: ValueWidth::DEFAULT,
            validity: ValidityPredicate::Always,
            proposals: ProcessId::all(3).map(|p| (p, Value(1))).collect(),
            propose_at: BTreeMap::new(),
            max_time: 100,
        };
        assert_eq!(cfg.validate(), Err(ConfigError::Resilience { n: 3, t: 1 }));
    }
}
