//! Per-key multiversion state of one replica.

use std::collections::{BTreeMap, BTreeSet};
use std::ops::Bound::{Excluded, Unbounded};

use crate::crypto::Digest;
use crate::messages::VersionRef;
use crate::types::{Key, Timestamp};

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct KeyState {
    /// Committed versions by writer timestamp (genesis is implicit).
    pub committed: BTreeMap<Timestamp, Digest>,
    /// Prepared (visible, undecided) versions by writer timestamp.
    pub prepared: BTreeMap<Timestamp, Digest>,
    /// Prepared or committed readers: reader ts -> (version read, reader id).
    pub readers: BTreeMap<Timestamp, (Timestamp, Digest)>,
    /// Read timestamps of outstanding reads.
    pub rts: BTreeSet<Timestamp>,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct VersionedStore {
    keys: BTreeMap<Key, KeyState>,
    genesis_id: Digest,
}

impl VersionedStore {
    pub fn new(genesis_id: Digest) -> Self {
        VersionedStore { keys: BTreeMap::new(), genesis_id }
    }

    pub fn key(&self, k: Key) -> Option<&KeyState> {
        self.keys.get(&k)
    }

    pub fn key_mut(&mut self, k: Key) -> &mut KeyState {
        self.keys.entry(k).or_default()
    }

    /// Latest committed version strictly below `ts`; genesis if none.
    pub fn committed_before(&self, k: Key, ts: Timestamp) -> VersionRef {
        self.keys
            .get(&k)
            .and_then(|s| s.committed.range(..ts).next_back())
            .map(|(v, id)| VersionRef { ts: *v, txn_id: *id })
            .unwrap_or(VersionRef { ts: Timestamp::GENESIS, txn_id: self.genesis_id })
    }

    /// Latest prepared version strictly below `ts`.
    pub fn prepared_before(&self, k: Key, ts: Timestamp) -> Option<VersionRef> {
        self.keys
            .get(&k)?
            .prepared
            .range(..ts)
            .next_back()
            .map(|(v, id)| VersionRef { ts: *v, txn_id: *id })
    }

    /// A committed or prepared writer of `k` with timestamp strictly between `lo` and `hi`.
    pub fn writer_between(&self, k: Key, lo: Timestamp, hi: Timestamp) -> Option<(Digest, bool)> {
        let s = self.keys.get(&k)?;
        let range = (Excluded(lo), Excluded(hi));
        if lo >= hi {
            return None;
        }
        if let Some((_, id)) = s.committed.range(range).next() {
            return Some((*id, true));
        }
        s.prepared.range(range).next().map(|(_, id)| (*id, false))
    }

    /// A reader of `k` with timestamp above `ts` that read a version below `ts`.
    pub fn reader_spanning(&self, k: Key, ts: Timestamp) -> Option<Digest> {
        let s = self.keys.get(&k)?;
        s.readers
            .range((Excluded(ts), Unbounded))
            .find(|(_, (rv, _))| *rv < ts)
            .map(|(_, (_, id))| *id)
    }

    pub fn max_rts(&self, k: Key) -> Option<Timestamp> {
        self.keys.get(&k)?.rts.iter().next_back().copied()
    }

    pub fn is_prepared(&self, k: Key, ts: Timestamp) -> bool {
        self.keys.get(&k).is_some_and(|s| s.prepared.contains_key(&ts))
    }
}
