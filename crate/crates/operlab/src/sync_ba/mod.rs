//! The synchronous agreement algorithm A^S: recursive phase-king style
//! agreement over halves of the process set, as a lock-step round machine,
//! plus the adapter that runs it inside a partially synchronous process.

mod lockstep;
mod machine;
mod sim;

pub use lockstep::{
    measure_gc_latency, run_lockstep, trial, ByzantineRounds, Equivocator, GcLatency, LockstepRun, Mailbag, Noise,
    TrialAdversary,
};
pub(crate) use lockstep::random_inner;
pub use machine::{GcMachine, SyncNode};
pub use sim::{CryptoFreeSim, RoundRecord, SimConfig};

use std::fmt::Debug;

use crate::payload::Payload;
use crate::types::{ProcessId, Value};

/// Lock-step rounds one graded consensus gets inside SYNC.
pub const L_GC: u32 = 7;

/// Messages a process sends to each member of S per graded consensus,
/// as counted by the budget recurrence.
pub const GC_MESSAGES_PER_MEMBER: u64 = 6;

/// Inner payloads bound for one receiver in one round.
pub type Bundle = Vec<Payload>;

/// A synchronous protocol expressed round by round.
pub trait RoundMachine: Clone + PartialEq + Debug {
    /// Bundles to send in round `round` (1-based), one per receiver.
    fn outbound(&mut self, round: u32) -> Vec<(ProcessId, Bundle)>;

    /// Consumes everything received in round `round`, ordered by sender.
    fn absorb(&mut self, round: u32, inbox: &[(ProcessId, Bundle)]);

    fn decision(&self) -> Option<Value>;
}

/// Round complexity RC(n) of SYNC among n processes.
pub fn rounds(n: usize) -> u32 {
    match n {
        0 | 1 => 0,
        _ => 2 * L_GC + 2 + rounds(n.div_ceil(2)) + rounds(n / 2),
    }
}

/// Per-process message complexity MC(n), along the larger half.
pub fn message_budget(n: usize) -> u64 {
    match n {
        0 | 1 => 0,
        _ => (2 * GC_MESSAGES_PER_MEMBER + 1) * n as u64 + message_budget(n.div_ceil(2)),
    }
}

/// Per-process bit budget B = MC(n) · (8 + L).
pub fn budget(n: usize, value_bits: u32) -> u64 {
    message_budget(n) * (8 + value_bits as u64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_recurrence() {
        assert_eq!(rounds(1), 0);
        assert_eq!(rounds(2), 16);
        assert_eq!(rounds(3), 32);
        assert_eq!(rounds(4), 48);
        assert_eq!(rounds(8), 112);
    }

    #[test]
    fn message_recurrence() {
        assert_eq!(message_budget(1), 0);
        assert_eq!(message_budget(2), 26);
        assert_eq!(message_budget(4), 78);
        assert_eq!(budget(4, 32), 3120);
    }
}
