use std::collections::{BTreeMap, BTreeSet};

use operlab::harness::{simulate, Scenario};
use operlab::payload::Accounting;
use operlab::simnet::{ConfigError, DelayRule, NetConfig, Strategy, Trace, TraceKind};
use operlab::types::{ProcessId, ValidityPredicate, Value, ValueWidth};

fn config(n: usize, t: usize) -> NetConfig {
    NetConfig {
        n,
        t,
        faulty: BTreeSet::new(),
        delta: 10,
        gst: 0,
        seed: 0,
        accounting: Accounting::Payload,
        width: ValueWidth::DEFAULT,
        validity: ValidityPredicate::Always,
        proposals: ProcessId::all(n).map(|p| (p, Value(1))).collect(),
        propose_at: BTreeMap::new(),
        max_time: 1000,
    }
}

fn with_strategy(strategy: Strategy, delay: DelayRule, gst: u64) -> Scenario {
    let mut s = Scenario::from_json(&format!(
        r#"{{"n": 7, "t": 2, "gst": {gst}, "start_spread": {gst}, "proposals": {{"kind": "split", "ways": 2, "base": 1}}}}"#
    ))
    .unwrap();
    s.strategy = Some(strategy);
    s.delay = delay;
    s
}

fn sends_of(trace: &Trace, p: ProcessId) -> Vec<u64> {
    trace.events.iter().filter(|e| e.process == p && matches!(e.kind, TraceKind::Send { .. })).map(|e| e.time).collect()
}

#[test]
fn config_errors() {
    assert_eq!(config(3, 1).validate(), Err(ConfigError::Resilience { n: 3, t: 1 }));
    assert_eq!(config(0, 0).validate(), Err(ConfigError::Resilience { n: 0, t: 0 }));
    let mut c = config(4, 1);
    c.faulty = [ProcessId(0), ProcessId(1)].into();
    assert_eq!(c.validate(), Err(ConfigError::TooManyFaulty { faulty: 2, t: 1 }));
    let mut c = config(4, 1);
    c.delta = 0;
    assert_eq!(c.validate(), Err(ConfigError::ZeroDelta));
    let mut c = config(4, 1);
    c.propose_at.insert(ProcessId(9), 0);
    assert_eq!(c.validate(), Err(ConfigError::UnknownProcess(ProcessId(9))));
    let mut c = config(4, 1);
    c.proposals.remove(&ProcessId(2));
    assert_eq!(c.validate(), Err(ConfigError::MissingProposal(ProcessId(2))));
    let mut c = config(4, 1);
    c.validity = ValidityPredicate::Membership { values: [Value(2)].into() };
    assert!(matches!(c.validate(), Err(ConfigError::InvalidProposal { .. })));
    // A faulty process may hold an invalid input.
    c.proposals = ProcessId::all(4).map(|p| (p, Value(if p.0 == 3 { 1 } else { 2 }))).collect();
    c.faulty = [ProcessId(3)].into();
    assert_eq!(c.validate(), Ok(()));
}

#[test]
fn every_delay_rule_respects_the_bound() {
    let rules = [
        DelayRule::Max,
        DelayRule::Uniform,
        DelayRule::Fixed { ticks: 3 },
        DelayRule::Fixed { ticks: 1000 },
        DelayRule::Split { slow: [ProcessId(0)].into() },
    ];
    for rule in rules {
        let trace = simulate(&with_strategy(Strategy::Random, rule.clone(), 150), 4);
        let mut seen = 0;
        for e in &trace.events {
            if let TraceKind::Send { deliver_at, .. } = e.kind {
                assert!(deliver_at >= e.time && deliver_at <= e.time.max(150) + 10, "{rule:?}");
                seen += 1;
            }
        }
        assert!(seen > 0);
    }
}

#[test]
fn fixed_delay_is_exact_after_gst() {
    let trace = simulate(&with_strategy(Strategy::Silent, DelayRule::Fixed { ticks: 4 }, 0), 0);
    assert!(trace
        .events
        .iter()
        .all(|e| !matches!(e.kind, TraceKind::Send { deliver_at, .. } if deliver_at != e.time + 4)));
}

#[test]
fn silent_and_crashed_processes_stop_sending() {
    let trace = simulate(&with_strategy(Strategy::Silent, DelayRule::Uniform, 100), 1);
    assert!(sends_of(&trace, ProcessId(5)).is_empty() && sends_of(&trace, ProcessId(6)).is_empty());
    let mut s = with_strategy(Strategy::Crash { at: 60 }, DelayRule::Uniform, 100);
    s.start_spread = 0;
    let trace = simulate(&s, 1);
    for p in [ProcessId(5), ProcessId(6)] {
        let sends = sends_of(&trace, p);
        assert!(!sends.is_empty() && sends.iter().all(|&t| t < 60), "{sends:?}");
    }
}

#[test]
fn flood_stops_at_gst() {
    let trace = simulate(&with_strategy(Strategy::Flood { period: 4 }, DelayRule::Uniform, 200), 2);
    let sends = sends_of(&trace, ProcessId(6));
    assert!(sends.len() > 10);
    assert!(sends.iter().all(|&t| t < 200));
}

#[test]
fn delayer_holds_messages_to_the_bound() {
    let trace = simulate(&with_strategy(Strategy::Delayer, DelayRule::Fixed { ticks: 1 }, 100), 3);
    let mut seen = 0;
    for e in trace.events.iter().filter(|e| e.process == ProcessId(5)) {
        if let TraceKind::Send { deliver_at, .. } = e.kind {
            assert_eq!(deliver_at, e.time.max(100) + 10);
            seen += 1;
        }
    }
    assert!(seen > 0);
}

#[test]
fn runs_are_deterministic_per_seed() {
    let s = with_strategy(Strategy::Random, DelayRule::Uniform, 120);
    assert_eq!(simulate(&s, 11), simulate(&s, 11));
    assert_ne!(simulate(&s, 11).events, simulate(&s, 12).events);
}

#[test]
fn render_has_six_tab_separated_columns() {
    let trace = simulate(&with_strategy(Strategy::Equivocate { values: [Value(1), Value(2)] }, DelayRule::Max, 0), 0);
    let text = trace.render();
    assert_eq!(text.lines().count(), trace.events.len());
    for line in text.lines() {
        let cols: Vec<&str> = line.split('\t').collect();
        assert_eq!(cols.len(), 6, "{line}");
        cols[0].parse::<u64>().unwrap();
        cols[5].parse::<u64>().unwrap();
    }
    assert!(text.lines().any(|l| l.split('\t').nth(2) == Some("decide")));
}
