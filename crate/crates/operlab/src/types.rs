//! Domain vocabulary: process identities, views, values, grades and the
//! external validity predicate.

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};

/// Index of a process in `0..n`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ProcessId(pub u16);

impl ProcessId {
    pub fn index(self) -> usize {
        self.0 as usize
    }

    /// All ids of an `n`-process system in ascending order.
    pub fn all(n: usize) -> impl Iterator<Item = ProcessId> {
        (0..n as u16).map(ProcessId)
    }
}

impl fmt::Display for ProcessId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "p{}", self.0)
    }
}

/// A view number. Views start at 1.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct View(u64);

impl View {
    pub const FIRST: View = View(1);

    /// Returns `None` for 0, which is not a view.
    pub fn new(number: u64) -> Option<View> {
        (number >= 1).then_some(View(number))
    }

    pub fn number(self) -> u64 {
        self.0
    }

    pub fn next(self) -> View {
        View(self.0 + 1)
    }

    /// The preceding view, or `None` for view 1.
    pub fn prev(self) -> Option<View> {
        View::new(self.0 - 1)
    }
}

impl fmt::Display for View {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// A protocol value. The payload is at most 64 bits; the configured
/// [`ValueWidth`] decides how many of them are meaningful and counted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Value(pub u64);

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Bit width L of every value in a run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "u32", into = "u32")]
pub struct ValueWidth(u32);

impl ValueWidth {
    pub const DEFAULT: ValueWidth = ValueWidth(32);

    pub fn new(bits: u32) -> Result<ValueWidth, String> {
        if (1..=64).contains(&bits) {
            Ok(ValueWidth(bits))
        } else {
            Err(format!("value width must be in 1..=64, got {bits}"))
        }
    }

    pub fn bits(self) -> u32 {
        self.0
    }

    pub fn fits(self, v: Value) -> bool {
        self.0 == 64 || v.0 >> self.0 == 0
    }

    /// Truncates `raw` to the width.
    pub fn clamp(self, raw: u64) -> Value {
        if self.0 == 64 {
            Value(raw)
        } else {
            Value(raw & ((1u64 << self.0) - 1))
        }
    }
}

impl Default for ValueWidth {
    fn default() -> Self {
        ValueWidth::DEFAULT
    }
}

impl TryFrom<u32> for ValueWidth {
    type Error = String;
    fn try_from(bits: u32) -> Result<Self, Self::Error> {
        ValueWidth::new(bits)
    }
}

impl From<ValueWidth> for u32 {
    fn from(w: ValueWidth) -> u32 {
        w.0
    }
}

/// Graded consensus grade, 0 or 1.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Grade {
    Zero,
    One,
}

impl Grade {
    pub fn as_u8(self) -> u8 {
        match self {
            Grade::Zero => 0,
            Grade::One => 1,
        }
    }
}

/// A value or the distinguished bottom symbol. Used wherever a protocol can
/// carry "no value" on the wire (the reducing broadcast default, GBCA's ⊥).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Slot {
    Bot,
    Val(Value),
}

impl Slot {
    pub fn value(self) -> Option<Value> {
        match self {
            Slot::Val(v) => Some(v),
            Slot::Bot => None,
        }
    }

    pub fn is_bot(self) -> bool {
        matches!(self, Slot::Bot)
    }
}

impl From<Value> for Slot {
    fn from(v: Value) -> Slot {
        Slot::Val(v)
    }
}

impl fmt::Display for Slot {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Slot::Bot => f.write_str("⊥"),
            Slot::Val(v) => write!(f, "{v}"),
        }
    }
}

/// The external validity predicate `valid(·)`.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ValidityPredicate {
    #[default]
    Always,
    Membership { values: BTreeSet<Value> },
    Modulo { divisor: u64, residue: u64 },
}

impl ValidityPredicate {
    pub fn valid(&self, v: Value) -> bool {
        match self {
            ValidityPredicate::Always => true,
            ValidityPredicate::Membership { values } => values.contains(&v),
            ValidityPredicate::Modulo { divisor, residue } => {
                *divisor != 0 && v.0 % divisor == *residue
            }
        }
    }
}

/// System size and fault budget, with the usual quorum thresholds.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Quorum {
    pub n: usize,
    pub t: usize,
}

impl Quorum {
    pub fn new(n: usize, t: usize) -> Quorum {
        Quorum { n, t }
    }

    /// The largest tolerable t for `n` processes.
    pub fn maximal(n: usize) -> Quorum {
        Quorum { n, t: n.saturating_sub(1) / 3 }
    }

    /// t + 1: at least one correct witness.
    pub fn weak(self) -> usize {
        self.t + 1
    }

    /// 2t + 1.
    pub fn strong(self) -> usize {
        2 * self.t + 1
    }

    /// n − t.
    pub fn all_correct(self) -> usize {
        self.n - self.t
    }

    pub fn resilient(self) -> bool {
        self.n > 3 * self.t
    }
}
