mod common;

use std::collections::{BTreeMap, BTreeSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::{notes, run_probe, strategies, Drive, Probe};
use operlab::graded_consensus::Gbca;
use operlab::runtime::{Action, Automaton, Event, Request};
use operlab::payload::Payload;
use operlab::simnet::{DelayRule, Strategy, Trace};
use operlab::types::{ProcessId, Quorum, Slot, ValidityPredicate, Value, ValueWidth};

const W: ValueWidth = ValueWidth::DEFAULT;

/// `(process, bottom outcome, value, grade)` per correct decision.
fn graded(trace: &Trace) -> Vec<(ProcessId, bool, Value, u8)> {
    notes(trace)
        .into_iter()
        .filter_map(|(_, p, s)| {
            let mut it = s.split_whitespace();
            (it.next()? == "graded").then_some(())?;
            let bottom = it.next()? == "Bottom";
            Some((p, bottom, Value(it.next()?.parse().ok()?), it.next()?.parse().ok()?))
        })
        .collect()
}

fn run(n: usize, gst: u64, seed: u64, strategy: Strategy, proposals: BTreeMap<ProcessId, Value>, spread: u64) -> Trace {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabc);
    let at = ProcessId::all(n).map(|p| (p, rng.gen_range(0..=spread))).collect();
    let q = Quorum::new(n, (n - 1) / 3);
    let make = || Probe::new(Box::new(Gbca::new(q, W, ValidityPredicate::Always)), Drive::Propose);
    run_probe(n, gst, seed, strategy, DelayRule::Uniform, proposals, at, &make)
}

#[test]
fn unanimous_inputs_give_grade_one() {
    for n in [4, 7, 10] {
        for strategy in strategies(200) {
            for seed in 0..4 {
                let proposals = ProcessId::all(n).map(|p| (p, Value(6))).collect();
                let trace = run(n, 200, seed, strategy.clone(), proposals, 200);
                let g = graded(&trace);
                assert_eq!(g.len(), trace.correct.len());
                assert!(g.iter().all(|&(_, b, v, grade)| !b && v == Value(6) && grade == 1), "{} {g:?}", strategy.name());
            }
        }
    }
}

#[test]
fn flooded_buffer_does_not_break_strong_validity() {
    // A flooder alone used to push the ⊥-echo gap past t+1.
    for seed in 0..20 {
        let proposals = ProcessId::all(4).map(|p| (p, Value(2))).collect();
        let trace = run(4, 500, seed, Strategy::Flood { period: 2 }, proposals, 500);
        assert!(graded(&trace).iter().all(|&(_, _, v, g)| v == Value(2) && g == 1));
    }
}

#[test]
fn many_values_terminate_with_correct_proposals_only() {
    for n in [4, 7, 10, 13] {
        for (k, strategy) in strategies(100).into_iter().enumerate() {
            for seed in 0..4u64 {
                // Every correct process proposes a different value.
                let proposals: BTreeMap<_, _> = ProcessId::all(n).map(|p| (p, Value(100 + p.0 as u64))).collect();
                let trace = run(n, 100, seed + 10 * k as u64, strategy.clone(), proposals.clone(), 100);
                let g = graded(&trace);
                assert_eq!(g.len(), trace.correct.len(), "termination n={n} {}", strategy.name());
                let inputs: BTreeSet<Value> = trace.correct.iter().map(|p| proposals[p]).collect();
                assert!(g.iter().all(|&(_, _, v, _)| inputs.contains(&v)), "correct-proposal safety");
            }
        }
    }
}

#[test]
fn grade_one_excludes_conflicts() {
    let mut strong = 0;
    for n in [4, 7] {
        for strategy in strategies(0) {
            for seed in 0..12u64 {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let proposals = ProcessId::all(n).map(|p| (p, Value(rng.gen_range(1..=2)))).collect();
                let trace = run(n, 0, seed, strategy.clone(), proposals, 30);
                let g = graded(&trace);
                if let Some(&(_, _, v, _)) = g.iter().find(|x| x.3 == 1) {
                    strong += 1;
                    assert!(g.iter().all(|&(_, b, x, _)| !b && x == v), "{g:?}");
                }
            }
        }
    }
    assert!(strong > 0);
}

#[test]
fn abandon_silences_the_instance() {
    let mut g = Gbca::new(Quorum::new(4, 1), W, ValidityPredicate::Always);
    g.step(Event::Request(Request::Propose(Value(1))));
    g.step(Event::Request(Request::Abandon));
    for from in 0..3 {
        let out = g.step(Event::message(ProcessId(from), Payload::Echo(1, Slot::Val(Value(1)))));
        assert!(out.iter().all(|a| !matches!(a, Action::Send { .. })));
    }
    assert_eq!(g.outcome(), None);
}
