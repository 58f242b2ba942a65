use std::collections::BTreeMap;
use std::fmt::Write as _;

use crate::payload::{InstancePath, Payload};
use crate::runtime::TimerId;
use crate::types::{ProcessId, Value, View};

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TraceKind {
    Propose(Value),
    /// One copy of an outbound message. `bits` follows the run's policy.
    Send { to: ProcessId, path: InstancePath, payload: Payload, bits: u64, deliver_at: u64 },
    Recv { from: ProcessId, path: InstancePath, payload: Payload },
    Timer(TimerId),
    Enter(View),
    Decide(Value),
    Halt,
    Diagnostic(String),
}

impl TraceKind {
    pub fn name(&self) -> &'static str {
        match self {
            TraceKind::Propose(_) => "propose",
            TraceKind::Send { .. } => "send",
            TraceKind::Recv { .. } => "recv",
            TraceKind::Timer(_) => "timer",
            TraceKind::Enter(_) => "enter",
            TraceKind::Decide(_) => "decide",
            TraceKind::Halt => "halt",
            TraceKind::Diagnostic(_) => "diagnostic",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TraceEvent {
    pub time: u64,
    pub process: ProcessId,
    pub kind: TraceKind,
}

/// Everything one run produced, in processing order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Trace {
    pub n: usize,
    pub t: usize,
    pub gst: u64,
    pub delta: u64,
    pub seed: u64,
    pub correct: Vec<ProcessId>,
    pub events: Vec<TraceEvent>,
    /// Whether every correct process decided before the time cap.
    pub terminated: bool,
    pub end_time: u64,
    pub misrouted: u64,
}

impl Trace {
    /// One line per event: `time, process, event-kind, path, payload-kind,
    /// bits`, tab-separated. Non-message events carry their argument in the
    /// payload-kind column.
    pub fn render(&self) -> String {
        let mut s = String::new();
        for e in &self.events {
            let (path, what, bits) = match &e.kind {
                TraceKind::Send { to, path, payload, bits, .. } => {
                    (path.to_string(), format!("{}>{}", payload.kind().name(), to), *bits)
                }
                TraceKind::Recv { from, path, payload } => {
                    (path.to_string(), format!("{}<{}", payload.kind().name(), from), 0)
                }
                TraceKind::Timer(id) => (id.path.to_string(), format!("#{}", id.key), 0),
                TraceKind::Propose(v) | TraceKind::Decide(v) => ("oper".into(), v.to_string(), 0),
                TraceKind::Enter(v) => ("oper".into(), v.to_string(), 0),
                TraceKind::Halt => ("oper".into(), "-".into(), 0),
                TraceKind::Diagnostic(d) => ("oper".into(), d.replace('\t', " "), 0),
            };
            let _ = writeln!(s, "{}\t{}\t{}\t{}\t{}\t{}", e.time, e.process, e.kind.name(), path, what, bits);
        }
        s
    }

    pub fn is_correct(&self, p: ProcessId) -> bool {
        self.correct.binary_search(&p).is_ok()
    }

    fn correct_events(&self) -> impl Iterator<Item = &TraceEvent> {
        self.events.iter().filter(|e| self.is_correct(e.process))
    }

    /// Bits each correct process sent at or after GST.
    pub fn pbit_post_gst(&self) -> BTreeMap<ProcessId, u64> {
        let mut out: BTreeMap<ProcessId, u64> = self.correct.iter().map(|&p| (p, 0)).collect();
        for e in self.correct_events() {
            if let TraceKind::Send { bits, .. } = e.kind {
                if e.time >= self.gst {
                    *out.get_mut(&e.process).expect("correct") += bits;
                }
            }
        }
        out
    }

    /// First decision per correct process: value and time.
    pub fn decisions(&self) -> BTreeMap<ProcessId, (Value, u64)> {
        let mut out = BTreeMap::new();
        for e in self.correct_events() {
            if let TraceKind::Decide(v) = e.kind {
                out.entry(e.process).or_insert((v, e.time));
            }
        }
        out
    }

    /// Every view entry of a correct process, in order.
    pub fn entries(&self) -> Vec<(u64, ProcessId, View)> {
        self.correct_events()
            .filter_map(|e| match e.kind {
                TraceKind::Enter(v) => Some((e.time, e.process, v)),
                _ => None,
            })
            .collect()
    }

    pub fn views_max(&self) -> u64 {
        self.entries().iter().map(|(_, _, v)| v.number()).max().unwrap_or(0)
    }

    /// Smallest view first entered by a correct process at or after GST,
    /// with that first-entry time.
    pub fn v_final(&self) -> Option<(View, u64)> {
        let mut first: BTreeMap<View, u64> = BTreeMap::new();
        for (time, _, v) in self.entries() {
            first.entry(v).or_insert(time);
        }
        first.into_iter().find(|&(_, time)| time >= self.gst)
    }

    /// (τ* − GST)/δ clamped at 0, where τ* is the last correct decision;
    /// `None` unless every correct process decided.
    pub fn latency(&self) -> Option<f64> {
        let d = self.decisions();
        if d.len() < self.correct.len() {
            return None;
        }
        let last = d.values().map(|&(_, t)| t).max().unwrap_or(0);
        Some(last.saturating_sub(self.gst) as f64 / self.delta as f64)
    }

    pub fn metrics(&self) -> Metrics {
        let pbit = self.pbit_post_gst();
        let max = pbit.values().copied().max().unwrap_or(0);
        let mean = if pbit.is_empty() { 0.0 } else { pbit.values().sum::<u64>() as f64 / pbit.len() as f64 };
        Metrics {
            seed: self.seed,
            n: self.n,
            t: self.t,
            gst: self.gst,
            delta: self.delta,
            pbit_max: max,
            pbit_mean: mean,
            latency: self.latency(),
            views_max: self.views_max(),
            terminated: self.terminated,
        }
    }
}

/// One CSV row.
#[derive(Debug, Clone, PartialEq)]
pub struct Metrics {
    pub seed: u64,
    pub n: usize,
    pub t: usize,
    pub gst: u64,
    pub delta: u64,
    pub pbit_max: u64,
    pub pbit_mean: f64,
    pub latency: Option<f64>,
    pub views_max: u64,
    pub terminated: bool,
}

impl Metrics {
    pub const CSV_HEADER: &'static str = "seed,n,t,gst,delta,pbit_max,pbit_mean,latency,views_max,terminated";

    pub fn csv_row(&self) -> String {
        let latency = self.latency.map_or_else(|| "NA".to_string(), |l| format!("{l:.3}"));
        format!(
            "{},{},{},{},{},{},{:.1},{},{},{}",
            self.seed,
            self.n,
            self.t,
            self.gst,
            self.delta,
            self.pbit_max,
            self.pbit_mean,
            latency,
            self.views_max,
            self.terminated
        )
    }
}
