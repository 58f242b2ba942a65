use std::collections::BTreeSet;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::types::{ProcessId, Value};

/// Message delays chosen by the adversary. Every rule is clamped to the
/// model's bound: delivery by max(send, GST) + δ.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DelayRule {
    /// Always the latest allowed delivery time.
    #[default]
    Max,
    /// Uniform over the allowed window.
    Uniform,
    /// A fixed delay, clamped to the bound.
    Fixed { ticks: u64 },
    /// Before GST, traffic from or to `slow` is held to the bound and the
    /// rest is uniform. Uniform afterwards.
    Split { slow: BTreeSet<ProcessId> },
}

impl DelayRule {
    /// Delivery time for a message sent at `now`.
    pub fn deliver_at(
        &self,
        now: u64,
        from: ProcessId,
        to: ProcessId,
        gst: u64,
        delta: u64,
        rng: &mut ChaCha8Rng,
    ) -> u64 {
        let bound = now.max(gst) + delta;
        let at = match self {
            DelayRule::Max => bound,
            DelayRule::Uniform => rng.gen_range(now..=bound),
            DelayRule::Fixed { ticks } => now + ticks,
            DelayRule::Split { slow } => {
                if now < gst && (slow.contains(&from) || slow.contains(&to)) {
                    bound
                } else {
                    rng.gen_range(now..=bound)
                }
            }
        };
        at.clamp(now, bound)
    }
}

/// Local clock behaviour before GST. Timers set at or after GST fire
/// exactly on time.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DriftRule {
    #[default]
    None,
    /// Uniform over (now, max(now, GST) + d].
    Uniform,
    /// As late as allowed.
    Late,
    /// One tick after setting.
    Early,
}

impl DriftRule {
    pub fn fire_at(&self, now: u64, after: u64, gst: u64, rng: &mut ChaCha8Rng) -> u64 {
        if now >= gst {
            return now + after;
        }
        let latest = gst + after;
        match self {
            DriftRule::None => now + after,
            DriftRule::Uniform => rng.gen_range(now + 1..=latest),
            DriftRule::Late => latest,
            DriftRule::Early => now + 1,
        }
    }
}

/// Behaviour of one faulty process.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Strategy {
    Silent,
    /// Correct until `at`, silent afterwards.
    Crash { at: u64 },
    /// Runs the protocol but rewrites every value it sends: receivers with
    /// even index see `values[0]`, odd ones `values[1]`.
    Equivocate { values: [Value; 2] },
    /// Runs the protocol with every message held to the delivery bound.
    Delayer,
    /// Before GST, broadcasts one random well-formed payload every
    /// `period` ticks at a plausible instance path. Silent from GST on.
    Flood { period: u64 },
    /// Runs the protocol and, per outgoing message, drops it, rewrites its
    /// values at random, or forwards it.
    Random,
}

impl Strategy {
    pub fn name(&self) -> &'static str {
        match self {
            Strategy::Silent => "silent",
            Strategy::Crash { .. } => "crash",
            Strategy::Equivocate { .. } => "equivocate",
            Strategy::Delayer => "delayer",
            Strategy::Flood { .. } => "flood",
            Strategy::Random => "random",
        }
    }

    /// Whether the process runs the honest automaton underneath.
    pub fn runs_protocol(&self) -> bool {
        !matches!(self, Strategy::Silent | Strategy::Flood { .. })
    }
}
