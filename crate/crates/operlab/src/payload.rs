//! Wire payloads, instance paths, the canonical bit encoding and bit
//! accounting.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::types::{Slot, Value, ValueWidth, View};

/// Sub-protocol tag of one path segment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Tag {
    Crux,
    Gc1,
    Gc2,
    As,
    Vb,
    Rb,
    Fin,
}

impl Tag {
    pub fn name(self) -> &'static str {
        match self {
            Tag::Crux => "crux",
            Tag::Gc1 => "gc1",
            Tag::Gc2 => "gc2",
            Tag::As => "as",
            Tag::Vb => "vb",
            Tag::Rb => "rb",
            Tag::Fin => "fin",
        }
    }
}

/// One hop of an [`InstancePath`]. `index` is the view for `crux` and 0
/// everywhere else.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Segment {
    pub tag: Tag,
    pub index: u64,
}

impl Segment {
    pub const fn new(tag: Tag) -> Segment {
        Segment { tag, index: 0 }
    }

    pub fn crux(view: View) -> Segment {
        Segment { tag: Tag::Crux, index: view.number() }
    }
}

impl fmt::Display for Segment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.tag == Tag::Crux {
            write!(f, "{}@{}", self.tag.name(), self.index)
        } else {
            f.write_str(self.tag.name())
        }
    }
}

/// Address of a sub-protocol instance, relative to the process's root
/// automaton. The empty path addresses the root itself.
#[derive(Debug, Clone, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct InstancePath(Vec<Segment>);

impl InstancePath {
    pub fn root() -> InstancePath {
        InstancePath(Vec::new())
    }

    pub fn from_segments(segments: Vec<Segment>) -> InstancePath {
        InstancePath(segments)
    }

    pub fn segments(&self) -> &[Segment] {
        &self.0
    }

    pub fn is_root(&self) -> bool {
        self.0.is_empty()
    }

    pub fn first(&self) -> Option<Segment> {
        self.0.first().copied()
    }

    /// The path with its first segment removed.
    pub fn tail(&self) -> InstancePath {
        InstancePath(self.0.iter().skip(1).copied().collect())
    }

    pub fn prepend(&self, head: Segment) -> InstancePath {
        let mut segments = Vec::with_capacity(self.0.len() + 1);
        segments.push(head);
        segments.extend_from_slice(&self.0);
        InstancePath(segments)
    }

    /// Bits of the routing header under the full accounting policy: the
    /// implicit root plus 8 tag bits and 32 index bits per segment.
    pub fn header_bits(&self) -> u64 {
        40 * (self.0.len() as u64 + 1)
    }
}

impl fmt::Display for InstancePath {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("oper")?;
        for s in &self.0 {
            write!(f, "/{s}")?;
        }
        Ok(())
    }
}

/// Message kinds. The discriminant is the 7-bit kind code on the wire.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Kind {
    Init = 1,
    Echo = 2,
    Echo2 = 3,
    Echo3 = 4,
    Echo4 = 5,
    Echo5 = 6,
    StartView = 7,
    Finish = 8,
    SyncRound = 9,
    HalfReport = 10,
}

impl Kind {
    pub const COUNT: usize = 10;

    pub fn name(self) -> &'static str {
        match self {
            Kind::Init => "INIT",
            Kind::Echo => "ECHO",
            Kind::Echo2 => "ECHO2",
            Kind::Echo3 => "ECHO3",
            Kind::Echo4 => "ECHO4",
            Kind::Echo5 => "ECHO5",
            Kind::StartView => "START-VIEW",
            Kind::Finish => "FINISH",
            Kind::SyncRound => "SYNC-ROUND",
            Kind::HalfReport => "HALF-REPORT",
        }
    }

    fn from_code(code: u8) -> Option<Kind> {
        Some(match code {
            1 => Kind::Init,
            2 => Kind::Echo,
            3 => Kind::Echo2,
            4 => Kind::Echo3,
            5 => Kind::Echo4,
            6 => Kind::Echo5,
            7 => Kind::StartView,
            8 => Kind::Finish,
            9 => Kind::SyncRound,
            10 => Kind::HalfReport,
            _ => return None,
        })
    }
}

/// GBCA stage carried by an echo payload, 1 through 5.
pub type Stage = u8;

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Payload {
    Init(Slot),
    /// `Echo(1, _)` is the plain ECHO; stages 2..=5 are ECHO2..ECHO5.
    Echo(Stage, Slot),
    StartView(View),
    Finish(Value),
    /// One simulated round's messages for one receiver.
    SyncRound { parity: bool, inner: Vec<Payload> },
    HalfReport(Value),
}

impl Payload {
    pub fn kind(&self) -> Kind {
        match self {
            Payload::Init(_) => Kind::Init,
            Payload::Echo(1, _) => Kind::Echo,
            Payload::Echo(2, _) => Kind::Echo2,
            Payload::Echo(3, _) => Kind::Echo3,
            Payload::Echo(4, _) => Kind::Echo4,
            Payload::Echo(_, _) => Kind::Echo5,
            Payload::StartView(_) => Kind::StartView,
            Payload::Finish(_) => Kind::Finish,
            Payload::SyncRound { .. } => Kind::SyncRound,
            Payload::HalfReport(_) => Kind::HalfReport,
        }
    }

    /// Structural checks a receiver applies before acting on a payload.
    pub fn well_formed(&self, width: ValueWidth) -> bool {
        let slot_ok = |s: &Slot| s.value().is_none_or(|v| width.fits(v));
        match self {
            Payload::Init(s) => slot_ok(s),
            Payload::Echo(stage, s) => (1..=5).contains(stage) && slot_ok(s),
            Payload::StartView(_) => true,
            Payload::Finish(v) | Payload::HalfReport(v) => width.fits(*v),
            Payload::SyncRound { inner, .. } => {
                inner.len() <= MAX_BUNDLE
                    && inner.iter().all(|p| {
                        matches!(p, Payload::Echo(..) | Payload::HalfReport(_)) && p.well_formed(width)
                    })
            }
        }
    }

    /// Replaces every carried value through `f`. Byzantine strategies use
    /// this to rewrite honest payloads.
    pub fn map_values(&self, f: &mut impl FnMut(Value) -> Value) -> Payload {
        let slot = |s: &Slot, f: &mut dyn FnMut(Value) -> Value| match s {
            Slot::Val(v) => Slot::Val(f(*v)),
            Slot::Bot => Slot::Bot,
        };
        match self {
            Payload::Init(s) => Payload::Init(slot(s, f)),
            Payload::Echo(k, s) => Payload::Echo(*k, slot(s, f)),
            Payload::StartView(v) => Payload::StartView(*v),
            Payload::Finish(v) => Payload::Finish(f(*v)),
            Payload::HalfReport(v) => Payload::HalfReport(f(*v)),
            Payload::SyncRound { parity, inner } => Payload::SyncRound {
                parity: *parity,
                inner: inner.iter().map(|p| p.map_values(f)).collect(),
            },
        }
    }
}

/// Maximum inner payloads in one SYNC-ROUND bundle (8-bit count field).
pub const MAX_BUNDLE: usize = 255;

const TAG_BITS: u64 = 8;
const VIEW_BITS: u32 = 64;
const BOT_FLAG: u8 = 0x80;

/// Which fields count toward bit complexity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Accounting {
    /// Kind tag and body fields; view numbers and routing headers excluded.
    #[default]
    Payload,
    /// Everything at declared widths, including the routing header.
    Full,
}

/// Bits of `p` under `policy`, excluding any routing header.
pub fn payload_bits(p: &Payload, width: ValueWidth, policy: Accounting) -> u64 {
    let l = width.bits() as u64;
    let slot = |s: &Slot| if s.is_bot() { 0 } else { l };
    TAG_BITS
        + match p {
            Payload::Init(s) | Payload::Echo(_, s) => slot(s),
            Payload::StartView(_) => match policy {
                Accounting::Payload => 0,
                Accounting::Full => VIEW_BITS as u64,
            },
            Payload::Finish(_) | Payload::HalfReport(_) => l,
            Payload::SyncRound { inner, .. } => {
                1 + 8 + inner.iter().map(|q| payload_bits(q, width, policy)).sum::<u64>()
            }
        }
}

/// Bits of an envelope: payload plus, under the full policy, its header.
pub fn envelope_bits(path: &InstancePath, p: &Payload, width: ValueWidth, policy: Accounting) -> u64 {
    let header = match policy {
        Accounting::Payload => 0,
        Accounting::Full => path.header_bits(),
    };
    header + payload_bits(p, width, policy)
}

/// A packed bit string, most significant bit first.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct BitString {
    bytes: Vec<u8>,
    len: usize,
}

impl BitString {
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn as_bytes(&self) -> &[u8] {
        &self.bytes
    }

    /// Builds a bit string from the first `len` bits of `bytes`.
    pub fn from_bytes(bytes: Vec<u8>, len: usize) -> BitString {
        assert!(len <= bytes.len() * 8);
        BitString { bytes, len }
    }

    fn push(&mut self, value: u64, bits: u32) {
        for i in (0..bits).rev() {
            let bit = (value >> i) & 1 == 1;
            if self.len.is_multiple_of(8) {
                self.bytes.push(0);
            }
            if bit {
                let last = self.bytes.len() - 1;
                self.bytes[last] |= 0x80 >> (self.len % 8);
            }
            self.len += 1;
        }
    }

    fn get(&self, at: usize) -> bool {
        self.bytes[at / 8] & (0x80 >> (at % 8)) != 0
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DecodeError {
    #[error("empty bit string")]
    Empty,
    #[error("bit string ends inside a field at bit {0}")]
    Truncated(usize),
    #[error("unknown kind code {0}")]
    UnknownKind(u8),
    #[error("kind {0} cannot carry ⊥")]
    UnexpectedBottom(&'static str),
    #[error("{0} is not allowed inside a SYNC-ROUND bundle")]
    NotBundleable(&'static str),
    #[error("{0} trailing bits")]
    Trailing(usize),
    #[error("view number 0")]
    ZeroView,
}

/// Canonical encoding: an 8-bit tag (high bit flags ⊥, low bits the kind
/// code) followed by the body fields.
pub fn encode(p: &Payload, width: ValueWidth) -> BitString {
    let mut out = BitString::default();
    write_payload(&mut out, p, width);
    out
}

fn write_payload(out: &mut BitString, p: &Payload, width: ValueWidth) {
    let l = width.bits();
    let code = p.kind() as u8;
    match p {
        Payload::Init(s) | Payload::Echo(_, s) => match s {
            Slot::Bot => out.push((code | BOT_FLAG) as u64, 8),
            Slot::Val(v) => {
                out.push(code as u64, 8);
                out.push(v.0, l);
            }
        },
        Payload::StartView(v) => {
            out.push(code as u64, 8);
            out.push(v.number(), VIEW_BITS);
        }
        Payload::Finish(v) | Payload::HalfReport(v) => {
            out.push(code as u64, 8);
            out.push(v.0, l);
        }
        Payload::SyncRound { parity, inner } => {
            out.push(code as u64, 8);
            out.push(*parity as u64, 1);
            out.push(inner.len() as u64, 8);
            for q in inner {
                write_payload(out, q, width);
            }
        }
    }
}

struct Reader<'a> {
    bits: &'a BitString,
    at: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: u32) -> Result<u64, DecodeError> {
        if self.at + n as usize > self.bits.len {
            return Err(DecodeError::Truncated(self.at));
        }
        let mut v = 0u64;
        for _ in 0..n {
            v = (v << 1) | self.bits.get(self.at) as u64;
            self.at += 1;
        }
        Ok(v)
    }
}

pub fn decode(bits: &BitString, width: ValueWidth) -> Result<Payload, DecodeError> {
    if bits.is_empty() {
        return Err(DecodeError::Empty);
    }
    let mut r = Reader { bits, at: 0 };
    let p = read_payload(&mut r, width, false)?;
    if r.at != bits.len {
        return Err(DecodeError::Trailing(bits.len - r.at));
    }
    Ok(p)
}

fn read_payload(r: &mut Reader<'_>, width: ValueWidth, nested: bool) -> Result<Payload, DecodeError> {
    let l = width.bits();
    let tag = r.take(8)? as u8;
    let bot = tag & BOT_FLAG != 0;
    let kind = Kind::from_code(tag & !BOT_FLAG).ok_or(DecodeError::UnknownKind(tag))?;
    if bot && !matches!(kind, Kind::Init | Kind::Echo | Kind::Echo2 | Kind::Echo3 | Kind::Echo4 | Kind::Echo5) {
        return Err(DecodeError::UnexpectedBottom(kind.name()));
    }
    if nested && !matches!(kind, Kind::Echo | Kind::Echo2 | Kind::Echo3 | Kind::Echo4 | Kind::Echo5 | Kind::HalfReport) {
        return Err(DecodeError::NotBundleable(kind.name()));
    }
    let slot = |r: &mut Reader<'_>| -> Result<Slot, DecodeError> {
        if bot {
            Ok(Slot::Bot)
        } else {
            Ok(Slot::Val(Value(r.take(l)?)))
        }
    };
    Ok(match kind {
        Kind::Init => Payload::Init(slot(r)?),
        Kind::Echo => Payload::Echo(1, slot(r)?),
        Kind::Echo2 => Payload::Echo(2, slot(r)?),
        Kind::Echo3 => Payload::Echo(3, slot(r)?),
        Kind::Echo4 => Payload::Echo(4, slot(r)?),
        Kind::Echo5 => Payload::Echo(5, slot(r)?),
        Kind::StartView => Payload::StartView(View::new(r.take(VIEW_BITS)?).ok_or(DecodeError::ZeroView)?),
        Kind::Finish => Payload::Finish(Value(r.take(l)?)),
        Kind::HalfReport => Payload::HalfReport(Value(r.take(l)?)),
        Kind::SyncRound => {
            let parity = r.take(1)? == 1;
            let count = r.take(8)? as usize;
            let mut inner = Vec::with_capacity(count);
            for _ in 0..count {
                inner.push(read_payload(r, width, true)?);
            }
            Payload::SyncRound { parity, inner }
        }
    })
}
