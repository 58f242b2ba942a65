//! Scenario files, seed sweeps, trace checks and the simulation
//! equivalence oracle.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::crux::CruxParams;
use crate::oper::Oper;
use crate::payload::{Accounting, Payload};
use crate::simnet::{self, AdversarySpec, DelayRule, DriftRule, Metrics, NetConfig, Strategy, Trace, TraceKind};
use crate::sync_ba::{self, Bundle, CryptoFreeSim, RoundMachine, SimConfig, SyncNode};
use crate::types::{ProcessId, Quorum, ValidityPredicate, Value, ValueWidth};

/// How correct inputs are assigned.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Proposals {
    Unanimous { value: Value },
    /// Process i proposes `base + step · (i mod ways)`.
    Split {
        ways: u64,
        #[serde(default)]
        base: u64,
        #[serde(default = "one")]
        step: u64,
    },
    List { values: Vec<Value> },
}

fn one() -> u64 {
    1
}

impl Proposals {
    /// Input of process `p`; `None` past the end of a list.
    pub fn value(&self, p: ProcessId) -> Option<Value> {
        match self {
            Proposals::Unanimous { value } => Some(*value),
            Proposals::Split { ways, base, step } => Some(Value(base + step * (p.index() as u64 % ways.max(&1)))),
            Proposals::List { values } => values.get(p.index()).copied(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Seeds {
    pub start: u64,
    pub count: u64,
}

impl Default for Seeds {
    fn default() -> Seeds {
        Seeds { start: 0, count: 1 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Check {
    Agreement,
    StrongValidity,
    ExternalValidity,
    TerminationDeadline,
    ViewCeiling,
    StartViewCount,
    PostHaltSilence,
    DeliveryBound,
}

impl Check {
    pub const DEFAULT: [Check; 8] = [
        Check::Agreement,
        Check::StrongValidity,
        Check::ExternalValidity,
        Check::TerminationDeadline,
        Check::ViewCeiling,
        Check::StartViewCount,
        Check::PostHaltSilence,
        Check::DeliveryBound,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Check::Agreement => "agreement",
            Check::StrongValidity => "strong-validity",
            Check::ExternalValidity => "external-validity",
            Check::TerminationDeadline => "termination-deadline",
            Check::ViewCeiling => "view-ceiling",
            Check::StartViewCount => "start-view-count",
            Check::PostHaltSilence => "post-halt-silence",
            Check::DeliveryBound => "delivery-bound",
        }
    }
}

fn default_delta() -> u64 {
    10
}

/// A batch of runs: configuration, adversary, inputs, checks and seeds.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    #[serde(default)]
    pub name: Option<String>,
    pub n: usize,
    pub t: usize,
    #[serde(default = "default_delta")]
    pub delta: u64,
    #[serde(default)]
    pub gst: u64,
    /// Defaults to 2δ.
    #[serde(default)]
    pub delta_shift: Option<u64>,
    #[serde(default)]
    pub value_width: Option<u32>,
    #[serde(default)]
    pub accounting: Accounting,
    #[serde(default)]
    pub validity: ValidityPredicate,
    pub proposals: Proposals,
    /// Faulty process indices; defaults to the last t.
    #[serde(default)]
    pub faulty: Option<Vec<u16>>,
    /// Strategy of every faulty process; silent when absent.
    #[serde(default)]
    pub strategy: Option<Strategy>,
    #[serde(default)]
    pub delay: DelayRule,
    #[serde(default)]
    pub drift: DriftRule,
    /// Processes propose at a seeded time in [0, min(start_spread, GST)].
    #[serde(default)]
    pub start_spread: u64,
    #[serde(default)]
    pub seeds: Seeds,
    #[serde(default)]
    pub checks: Option<Vec<Check>>,
    #[serde(default)]
    pub max_time: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ScenarioError {
    #[error("scenario parse error: {0}")]
    Parse(String),
    #[error("invalid scenario: {0}")]
    Config(#[from] simnet::ConfigError),
    #[error("invalid scenario: {0}")]
    Field(String),
}

impl Scenario {
    pub fn from_json(text: &str) -> Result<Scenario, ScenarioError> {
        let s: Scenario = serde_json::from_str(text).map_err(|e| ScenarioError::Parse(e.to_string()))?;
        s.validate()?;
        Ok(s)
    }

    pub fn width(&self) -> ValueWidth {
        self.value_width.map_or(ValueWidth::DEFAULT, |w| ValueWidth::new(w).unwrap_or(ValueWidth::DEFAULT))
    }

    pub fn delta_shift(&self) -> u64 {
        self.delta_shift.unwrap_or(2 * self.delta)
    }

    pub fn params(&self) -> CruxParams {
        CruxParams::new(Quorum::new(self.n, self.t), self.delta, self.delta_shift(), self.width())
    }

    pub fn faulty(&self) -> BTreeSet<ProcessId> {
        match &self.faulty {
            Some(list) => list.iter().map(|&i| ProcessId(i)).collect(),
            None => (self.n - self.t.min(self.n)..self.n).map(|i| ProcessId(i as u16)).collect(),
        }
    }

    pub fn checks(&self) -> Vec<Check> {
        self.checks.clone().unwrap_or_else(|| Check::DEFAULT.to_vec())
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        if let Some(w) = self.value_width {
            ValueWidth::new(w).map_err(|e| ScenarioError::Field(format!("value_width: {e}")))?;
        }
        if let Some(0) = self.delta_shift {
            return Err(ScenarioError::Field("delta_shift: must be positive".into()));
        }
        if let Proposals::List { values } = &self.proposals {
            if values.len() != self.n {
                return Err(ScenarioError::Field(format!("proposals: {} values for n={}", values.len(), self.n)));
            }
        }
        if let Some(Strategy::Equivocate { values }) = &self.strategy {
            if !values.iter().all(|&v| self.width().fits(v)) {
                return Err(ScenarioError::Field("strategy: equivocation values exceed the value width".into()));
            }
        }
        self.net(self.seeds.start, 0).validate()?;
        Ok(())
    }

    /// The simulator configuration for one seed.
    pub fn net(&self, seed: u64, max_time: u64) -> NetConfig {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5e_ed0f_57a7);
        let faulty = self.faulty();
        let proposals = ProcessId::all(self.n).map(|p| (p, self.proposals.value(p).unwrap_or(Value(0)))).collect();
        let spread = self.start_spread.min(self.gst);
        let propose_at = ProcessId::all(self.n)
            .filter(|_| spread > 0)
            .map(|p| (p, rng.gen_range(0..=spread)))
            .collect();
        NetConfig {
            n: self.n,
            t: self.t,
            faulty,
            delta: self.delta,
            gst: self.gst,
            seed,
            accounting: self.accounting,
            width: self.width(),
            validity: self.validity.clone(),
            proposals,
            propose_at,
            max_time,
        }
    }

    pub fn adversary(&self) -> AdversarySpec {
        let strategies = match &self.strategy {
            Some(s) => self.faulty().into_iter().map(|p| (p, s.clone())).collect(),
            None => BTreeMap::new(),
        };
        AdversarySpec { delay: self.delay.clone(), drift: self.drift.clone(), strategies }
    }

    /// The virtual-time cap: explicit, from `OPERLAB_MAXTIME`, or
    /// 100·Δ_total past GST.
    pub fn max_time(&self) -> u64 {
        if let Some(m) = self.max_time {
            return m;
        }
        if let Some(m) = std::env::var("OPERLAB_MAXTIME").ok().and_then(|v| v.parse().ok()) {
            return m;
        }
        self.gst + self.start_spread + 100 * self.params().delta_total()
    }

    pub fn seed_list(&self) -> Vec<u64> {
        (self.seeds.start..self.seeds.start + self.seeds.count).collect()
    }
}

/// One failed check.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub check: Check,
    pub n: usize,
    pub seed: u64,
    pub detail: String,
    pub excerpt: Vec<String>,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} violated (n={}, seed={}): {}", self.check.name(), self.n, self.seed, self.detail)
    }
}

/// Evaluates `checks` on a finished trace.
pub fn check_trace(trace: &Trace, scenario: &Scenario, checks: &[Check]) -> Vec<Violation> {
    let params = scenario.params();
    let mut out = Vec::new();
    let mut fail = |check: Check, detail: String| {
        out.push(Violation { check, n: trace.n, seed: trace.seed, detail, excerpt: Vec::new() })
    };
    let decisions = trace.decisions();
    let correct_inputs: BTreeSet<Value> =
        trace.correct.iter().filter_map(|&p| scenario.proposals.value(p)).collect();
    for &check in checks {
        match check {
            Check::Agreement => {
                let values: BTreeSet<Value> = decisions.values().map(|&(v, _)| v).collect();
                if values.len() > 1 {
                    fail(check, format!("decided values {values:?}"));
                }
            }
            Check::StrongValidity => {
                if correct_inputs.len() == 1 {
                    let v = *correct_inputs.first().expect("one input");
                    for (p, &(d, _)) in &decisions {
                        if d != v {
                            fail(check, format!("{p} decided {d}, unanimous input {v}"));
                        }
                    }
                }
            }
            Check::ExternalValidity => {
                for (p, &(d, _)) in &decisions {
                    if !scenario.validity.valid(d) {
                        fail(check, format!("{p} decided invalid {d}"));
                    }
                }
            }
            Check::TerminationDeadline => {
                if !trace.terminated {
                    fail(check, format!("non-terminated: {} of {} decided", decisions.len(), trace.correct.len()));
                } else if let Some((vf, tau)) = trace.v_final() {
                    let deadline = tau + params.delta_total() + 2 * trace.delta;
                    for (p, &(_, at)) in &decisions {
                        if at > deadline {
                            fail(check, format!("{p} decided at {at}, deadline {deadline} (V_final={vf})"));
                        }
                    }
                }
            }
            Check::ViewCeiling => {
                if let Some((vf, _)) = trace.v_final() {
                    let max = trace.views_max();
                    if max > vf.number() + 1 {
                        fail(check, format!("entered view {max}, V_final={vf}"));
                    }
                }
            }
            Check::StartViewCount => {
                let mut count: BTreeMap<(ProcessId, u64), u32> = BTreeMap::new();
                for e in &trace.events {
                    if let TraceKind::Send { to, payload: Payload::StartView(v), .. } = &e.kind {
                        if *to == e.process && trace.is_correct(e.process) {
                            *count.entry((e.process, v.number())).or_default() += 1;
                        }
                    }
                }
                for ((p, v), c) in count {
                    if c > 2 {
                        fail(check, format!("{p} broadcast START-VIEW {v} {c} times"));
                    }
                }
            }
            Check::PostHaltSilence => {
                let mut halted = BTreeSet::new();
                for e in &trace.events {
                    match e.kind {
                        TraceKind::Halt => {
                            halted.insert(e.process);
                        }
                        TraceKind::Send { .. } if halted.contains(&e.process) && trace.is_correct(e.process) => {
                            fail(check, format!("{} sent at {} after halting", e.process, e.time));
                            break;
                        }
                        _ => {}
                    }
                }
            }
            Check::DeliveryBound => {
                for e in &trace.events {
                    if let TraceKind::Send { deliver_at, .. } = e.kind {
                        if deliver_at > e.time.max(trace.gst) + trace.delta {
                            fail(check, format!("message sent at {} delivered at {deliver_at}", e.time));
                            break;
                        }
                    }
                }
            }
        }
    }
    out
}

/// Output of one scenario execution.
#[derive(Debug, Clone, Default)]
pub struct Report {
    /// Sorted by (n, seed).
    pub rows: Vec<Metrics>,
    pub violations: Vec<Violation>,
    /// Rendered traces of the kept runs: `(n, seed, text)`.
    pub traces: Vec<(usize, u64, String)>,
}

impl Report {
    pub fn ok(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn csv(&self) -> String {
        let mut s = String::from(Metrics::CSV_HEADER);
        s.push('\n');
        for r in &self.rows {
            s.push_str(&r.csv_row());
            s.push('\n');
        }
        s
    }
}

/// Runs one seed of an OPER scenario.
pub fn simulate(scenario: &Scenario, seed: u64) -> Trace {
    let params = scenario.params();
    let validity = scenario.validity.clone();
    let net = scenario.net(seed, scenario.max_time());
    let adv = scenario.adversary();
    simnet::run(&net, &adv, &|p| Box::new(Oper::new(p, params, validity.clone()))).trace
}

/// Runs every seed in parallel and evaluates the scenario's checks.
/// `keep_traces` keeps every rendered trace; violating runs are always kept.
pub fn run_scenario(scenario: &Scenario, keep_traces: bool) -> Report {
    let checks = scenario.checks();
    let mut results: Vec<(Metrics, Vec<Violation>, Option<String>)> = scenario
        .seed_list()
        .into_par_iter()
        .map(|seed| {
            let trace = simulate(scenario, seed);
            let mut v = check_trace(&trace, scenario, &checks);
            let text = (keep_traces || !v.is_empty()).then(|| trace.render());
            if let Some(text) = &text {
                let excerpt: Vec<String> = text.lines().rev().take(8).map(str::to_owned).collect();
                for x in &mut v {
                    x.excerpt = excerpt.iter().rev().cloned().collect();
                }
            }
            (trace.metrics(), v, text)
        })
        .collect();
    results.sort_by_key(|(m, _, _)| (m.n, m.seed));
    let mut report = Report::default();
    for (m, v, text) in results {
        if let Some(text) = text {
            report.traces.push((m.n, m.seed, text));
        }
        report.rows.push(m);
        report.violations.extend(v);
    }
    report
}

/// Per-n summary of a complexity sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub n: usize,
    pub t: usize,
    pub runs: usize,
    /// Max over seeds and correct processes of bits sent after GST.
    pub pbit_max: u64,
    /// pbit_max / (n · (8 + L)).
    pub ratio: f64,
}

#[derive(Debug, Clone, Default)]
pub struct SweepReport {
    pub table: Vec<SweepRow>,
    pub runs: Report,
}

impl SweepReport {
    pub fn max_ratio(&self) -> f64 {
        self.table.iter().map(|r| r.ratio).fold(0.0, f64::max)
    }

    pub fn render(&self) -> String {
        let mut s = String::from("n,t,runs,pbit_max,ratio\n");
        for r in &self.table {
            s.push_str(&format!("{},{},{},{},{:.3}\n", r.n, r.t, r.runs, r.pbit_max, r.ratio));
        }
        s.push_str(&format!("max ratio pbit_max/(n(8+L)) = {:.3}\n", self.max_ratio()));
        s
    }
}

/// Runs `base` for every n with maximal t and the last t processes faulty.
pub fn sweep(base: &Scenario, ns: &[usize], seeds: u64) -> Result<SweepReport, ScenarioError> {
    let mut out = SweepReport::default();
    for &n in ns {
        let mut s = base.clone();
        s.n = n;
        s.t = (n - 1) / 3;
        s.faulty = None;
        s.seeds = Seeds { start: base.seeds.start, count: seeds };
        if let Proposals::List { .. } = s.proposals {
            return Err(ScenarioError::Field("proposals: a sweep needs unanimous or split inputs".into()));
        }
        s.validate()?;
        let report = run_scenario(&s, false);
        if seeds > 0 {
            let pbit_max = report.rows.iter().map(|r| r.pbit_max).max().unwrap_or(0);
            let unit = n as u64 * (8 + s.width().bits() as u64);
            out.table.push(SweepRow { n, t: s.t, runs: report.rows.len(), pbit_max, ratio: pbit_max as f64 / unit as f64 });
        }
        out.runs.rows.extend(report.rows);
        out.runs.violations.extend(report.violations);
    }
    Ok(out)
}

/// Result of comparing a simulated run with its lock-step reference.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Equivalence {
    Pass { rounds: u32 },
    Fail { process: ProcessId, round: u32 },
}

impl Equivalence {
    pub fn passed(&self) -> bool {
        matches!(self, Equivalence::Pass { .. })
    }
}

impl fmt::Display for Equivalence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Equivalence::Pass { rounds } => write!(f, "PASS ({rounds} rounds)"),
            Equivalence::Fail { process, round } => write!(f, "FAIL at {process}, round {round}"),
        }
    }
}

/// Runs the synchronous agreement through the simulation wrapper with all
/// correct starts within Δ_shift after GST, then replays the same
/// Byzantine round inputs in lock-step and compares every correct state
/// after every round. `mistag` runs the wrapper's negative control.
pub fn oracle_sim(scenario: &Scenario, seed: u64, mistag: bool) -> Equivalence {
    let n = scenario.n;
    let width = scenario.width();
    let shift = scenario.delta_shift();
    let rounds = sync_ba::rounds(n);
    let sim_cfg = SimConfig {
        rounds,
        round_len: shift + scenario.delta,
        cap_bits: 2 * sync_ba::budget(n, width.bits()),
        width,
        record: true,
        mistag_parity: mistag,
    };
    let mut net = scenario.net(seed, u64::MAX);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // The first process starts exactly at GST and one exactly Δ_shift later,
    // so both ends of the allowed skew occur.
    net.propose_at = ProcessId::all(n)
        .map(|p| {
            let offset = match p.index() {
                0 => 0,
                1 => shift,
                _ => rng.gen_range(0..=shift),
            };
            (p, scenario.gst + offset)
        })
        .collect();
    let total = scenario.gst + shift + rounds as u64 * (shift + scenario.delta) + scenario.delta;
    net.max_time = total + 1;
    let adv = scenario.adversary();
    let run = simnet::run(&net, &adv, &|p| {
        Box::new(CryptoFreeSim::new(sim_cfg, move |v| SyncNode::top(p, n, v, width)))
    });
    let correct = net.correct();
    let wrapped = |p: &ProcessId| {
        run.processes[p].as_any().downcast_ref::<CryptoFreeSim<SyncNode>>().expect("simulation automaton")
    };
    // Byzantine inputs exactly as the wrapped machines absorbed them.
    let mut replay: BTreeMap<(u32, ProcessId), Vec<(ProcessId, Bundle)>> = BTreeMap::new();
    for p in &correct {
        for rec in wrapped(p).history() {
            let forged: Vec<(ProcessId, Bundle)> =
                rec.inbox.iter().filter(|(from, _)| net.faulty.contains(from)).cloned().collect();
            if !forged.is_empty() {
                replay.insert((rec.round, *p), forged);
            }
        }
    }
    let machines = correct.iter().map(|&p| (p, SyncNode::top(p, n, net.proposals[&p], width))).collect();
    let reference = sync_ba::run_lockstep(machines, rounds, width, &mut replay, true);
    for r in 1..=rounds {
        for p in &correct {
            let history = wrapped(p).history();
            let Some(rec) = history.get(r as usize - 1) else {
                return Equivalence::Fail { process: *p, round: r };
            };
            if rec.state != reference.states[r as usize - 1][p] {
                return Equivalence::Fail { process: *p, round: r };
            }
        }
    }
    // Decisions must match as well.
    for p in &correct {
        let d = wrapped(p).machine().and_then(|m| m.decision());
        if d != reference.machines[p].decision() {
            return Equivalence::Fail { process: *p, round: rounds };
        }
    }
    Equivalence::Pass { rounds }
}
