use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::{Bundle, RoundMachine};
use crate::payload::{payload_bits, Accounting, Payload};
use crate::types::{ProcessId, Slot, Value, ValueWidth};

/// Messages keyed by receiver: `(sender, bundle)` in sending order.
pub type Mailbag = BTreeMap<ProcessId, Vec<(ProcessId, Bundle)>>;

/// Source of Byzantine traffic in a lock-step run. Sees what correct
/// processes send in the same round.
pub trait ByzantineRounds {
    fn round(&mut self, round: u32, correct: &BTreeMap<ProcessId, Vec<(ProcessId, Bundle)>>) -> Mailbag;
}

/// No Byzantine traffic.
impl ByzantineRounds for () {
    fn round(&mut self, _: u32, _: &BTreeMap<ProcessId, Vec<(ProcessId, Bundle)>>) -> Mailbag {
        Mailbag::new()
    }
}

/// Replays recorded traffic: `(round, receiver) → [(sender, bundle)]`.
impl ByzantineRounds for BTreeMap<(u32, ProcessId), Vec<(ProcessId, Bundle)>> {
    fn round(&mut self, round: u32, _: &BTreeMap<ProcessId, Vec<(ProcessId, Bundle)>>) -> Mailbag {
        self.range((round, ProcessId(0))..=(round, ProcessId(u16::MAX)))
            .map(|(&(_, to), msgs)| (to, msgs.clone()))
            .collect()
    }
}

/// Each faulty process forwards the bundle some correct process sends to
/// the same receiver, with every value replaced by one of two choices
/// according to the receiver's parity.
pub struct Equivocator {
    pub faulty: Vec<ProcessId>,
    pub values: [Value; 2],
}

impl ByzantineRounds for Equivocator {
    fn round(&mut self, _: u32, correct: &BTreeMap<ProcessId, Vec<(ProcessId, Bundle)>>) -> Mailbag {
        let mut bag = Mailbag::new();
        for sends in correct.values() {
            for (to, bundle) in sends {
                if bag.contains_key(to) {
                    continue;
                }
                let v = self.values[to.index() % 2];
                let forged: Bundle = bundle.iter().map(|p| p.map_values(&mut |_| v)).collect();
                bag.insert(*to, self.faulty.iter().map(|&f| (f, forged.clone())).collect());
            }
        }
        bag
    }
}

/// Random well-formed echoes and reports from a small value pool.
pub struct Noise {
    pub faulty: Vec<ProcessId>,
    pub n: usize,
    pub pool: Vec<Value>,
    pub rng: ChaCha8Rng,
}

impl ByzantineRounds for Noise {
    fn round(&mut self, _: u32, _: &BTreeMap<ProcessId, Vec<(ProcessId, Bundle)>>) -> Mailbag {
        let mut bag = Mailbag::new();
        for &f in &self.faulty {
            for to in ProcessId::all(self.n) {
                if self.rng.gen_bool(0.3) {
                    continue;
                }
                let len = self.rng.gen_range(1..=3);
                let bundle = (0..len).map(|_| random_inner(&mut self.rng, &self.pool)).collect();
                bag.entry(to).or_default().push((f, bundle));
            }
        }
        bag
    }
}

pub(crate) fn random_inner(rng: &mut ChaCha8Rng, pool: &[Value]) -> Payload {
    let v = *pool.choose(rng).expect("non-empty pool");
    match rng.gen_range(0..7) {
        0 => Payload::HalfReport(v),
        k => {
            let slot = if rng.gen_bool(0.2) { Slot::Bot } else { Slot::Val(v) };
            Payload::Echo(k.min(5) as u8, slot)
        }
    }
}

/// Outcome of a lock-step execution.
#[derive(Debug, Clone)]
pub struct LockstepRun<M> {
    pub machines: BTreeMap<ProcessId, M>,
    /// Bundles sent per correct process.
    pub messages: BTreeMap<ProcessId, u64>,
    /// Inner payload bits sent per correct process.
    pub bits: BTreeMap<ProcessId, u64>,
    /// `states[k]` holds every correct state after round k+1.
    pub states: Vec<BTreeMap<ProcessId, M>>,
    /// What each correct process absorbed per round: `inboxes[k][p]`.
    pub inboxes: Vec<Mailbag>,
}

/// Runs `rounds` synchronous rounds. Every round, each correct machine
/// emits, the adversary adds its traffic, and each correct machine absorbs
/// its inbox sorted by sender.
pub fn run_lockstep<M: RoundMachine>(
    machines: BTreeMap<ProcessId, M>,
    rounds: u32,
    width: ValueWidth,
    adversary: &mut dyn ByzantineRounds,
    record: bool,
) -> LockstepRun<M> {
    let mut run = LockstepRun {
        messages: machines.keys().map(|&p| (p, 0)).collect(),
        bits: machines.keys().map(|&p| (p, 0)).collect(),
        machines,
        states: Vec::new(),
        inboxes: Vec::new(),
    };
    for r in 1..=rounds {
        let mut sent = BTreeMap::new();
        for (&p, m) in run.machines.iter_mut() {
            let out = m.outbound(r);
            *run.messages.get_mut(&p).unwrap() += out.len() as u64;
            *run.bits.get_mut(&p).unwrap() += out
                .iter()
                .flat_map(|(_, b)| b)
                .map(|q| payload_bits(q, width, Accounting::Payload))
                .sum::<u64>();
            sent.insert(p, out);
        }
        let mut bag = Mailbag::new();
        for (&from, out) in &sent {
            for (to, bundle) in out {
                bag.entry(*to).or_default().push((from, bundle.clone()));
            }
        }
        for (to, msgs) in adversary.round(r, &sent) {
            bag.entry(to).or_default().extend(msgs);
        }
        for (&p, m) in run.machines.iter_mut() {
            let mut inbox = bag.remove(&p).unwrap_or_default();
            inbox.sort_by_key(|(from, _)| *from);
            m.absorb(r, &inbox);
            if record {
                run.inboxes.resize_with(r as usize, Mailbag::new);
                run.inboxes[r as usize - 1].insert(p, inbox);
            }
        }
        if record {
            run.states.push(run.machines.clone());
        }
    }
    run
}

/// The lock-step adversaries used by the measurement trials, chosen by
/// `seed % 3`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrialAdversary {
    Silent,
    Equivocate,
    Noise,
}

impl TrialAdversary {
    pub fn for_seed(seed: u64) -> TrialAdversary {
        [TrialAdversary::Silent, TrialAdversary::Equivocate, TrialAdversary::Noise][(seed % 3) as usize]
    }
}

/// A seeded lock-step trial among `n` processes with the last
/// `⌊(n−1)/3⌋` faulty. Correct inputs are drawn from up to four values.
pub fn trial<M: RoundMachine>(
    n: usize,
    seed: u64,
    rounds: u32,
    width: ValueWidth,
    record: bool,
    make: impl Fn(ProcessId, &[ProcessId], Value) -> M,
) -> LockstepRun<M> {
    let t = (n - 1) / 3;
    let mut rng = <ChaCha8Rng as rand::SeedableRng>::seed_from_u64(seed.wrapping_mul(31).wrapping_add(n as u64));
    let k = rng.gen_range(1..=4u64);
    let members: Vec<ProcessId> = ProcessId::all(n).collect();
    let faulty = members[n - t..].to_vec();
    let machines = members[..n - t]
        .iter()
        .map(|&p| (p, make(p, &members, Value(rng.gen_range(0..k)))))
        .collect();
    match TrialAdversary::for_seed(seed) {
        TrialAdversary::Silent => run_lockstep(machines, rounds, width, &mut (), record),
        TrialAdversary::Equivocate => {
            let mut adv = Equivocator { faulty, values: [Value(0), Value(1)] };
            run_lockstep(machines, rounds, width, &mut adv, record)
        }
        TrialAdversary::Noise => {
            let pool = (0..=k).map(Value).collect();
            let mut adv = Noise { faulty, n, pool, rng };
            run_lockstep(machines, rounds, width, &mut adv, record)
        }
    }
}

/// Decision latency of lock-step graded consensus over many trials.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct GcLatency {
    pub trials: u64,
    /// Latest round at whose end some correct process decided.
    pub worst: u32,
    /// Correct processes still undecided after the measured rounds.
    pub undecided: u64,
    pub histogram: BTreeMap<u32, u64>,
}

/// Runs `seeds` trials per group size for `horizon` rounds each.
pub fn measure_gc_latency(sizes: &[usize], seeds: u64, horizon: u32, width: ValueWidth) -> GcLatency {
    let mut out = GcLatency::default();
    for &n in sizes {
        for seed in 0..seeds {
            let run = trial(n, seed, horizon, width, false, |_, members, v| {
                super::GcMachine::new(members.to_vec(), v, width)
            });
            out.trials += 1;
            for m in run.machines.values() {
                match m.decided_round() {
                    Some(r) => {
                        out.worst = out.worst.max(r);
                        *out.histogram.entry(r).or_default() += 1;
                    }
                    None => out.undecided += 1,
                }
            }
        }
    }
    out
}
