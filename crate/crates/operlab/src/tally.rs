//! Per-key sender sets, the bookkeeping behind every quorum rule.

use std::collections::{BTreeMap, BTreeSet};

use crate::types::ProcessId;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Tally<K: Ord> {
    by_key: BTreeMap<K, BTreeSet<ProcessId>>,
}

impl<K: Ord> Default for Tally<K> {
    fn default() -> Self {
        Tally { by_key: BTreeMap::new() }
    }
}

impl<K: Ord + Copy> Tally<K> {
    /// Records `from` as a supporter of `key`. Returns false if already
    /// recorded.
    pub fn insert(&mut self, key: K, from: ProcessId) -> bool {
        self.by_key.entry(key).or_default().insert(from)
    }

    pub fn count(&self, key: K) -> usize {
        self.by_key.get(&key).map_or(0, |s| s.len())
    }

    pub fn supporters(&self, key: K) -> impl Iterator<Item = ProcessId> + '_ {
        self.by_key.get(&key).into_iter().flatten().copied()
    }

    /// Keys with their support, in key order.
    pub fn iter(&self) -> impl Iterator<Item = (K, usize)> + '_ {
        self.by_key.iter().map(|(k, s)| (*k, s.len()))
    }

    /// Keys with at least `threshold` supporters, in key order.
    pub fn reaching(&self, threshold: usize) -> Vec<K> {
        self.iter().filter(|&(_, c)| c >= threshold).map(|(k, _)| k).collect()
    }

    /// Sum of support over all keys (a sender counts once per key).
    pub fn total(&self) -> usize {
        self.by_key.values().map(|s| s.len()).sum()
    }

    pub fn max_count(&self) -> usize {
        self.by_key.values().map(|s| s.len()).max().unwrap_or(0)
    }

    /// Distinct senders across all keys.
    pub fn senders(&self) -> BTreeSet<ProcessId> {
        self.by_key.values().flatten().copied().collect()
    }

    /// Size of the union of the supporter sets of `a` and `b`.
    pub fn union_count(&self, a: K, b: &Tally<K>) -> usize {
        let mut s: BTreeSet<ProcessId> = self.supporters(a).collect();
        s.extend(b.supporters(a));
        s.len()
    }
}
