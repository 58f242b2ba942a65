//! Deterministic simulation of the OPER transformation: a synchronous
//! Byzantine agreement algorithm run inside per-view CRUX instances to get
//! partially synchronous agreement with linear per-process bit complexity.

pub mod crux;
pub mod finisher;
pub mod graded_consensus;
pub mod harness;
pub mod oper;
pub mod payload;
pub mod reducing_broadcast;
pub mod runtime;
pub mod simnet;
pub mod sync_ba;
pub mod tally;
pub mod types;
pub mod validation_broadcast;
