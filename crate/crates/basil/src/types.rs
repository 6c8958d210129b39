//! Core value types: identities, timestamps, transaction metadata.

use std::fmt;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use crate::codec::{tag, Encode, Encoder};
use crate::crypto::{self, Digest};

pub type Key = u64;
pub type Value = Vec<u8>;
pub type ShardId = u32;
pub type View = u64;

/// Key to shard placement: `key mod S`.
pub fn shard_of(key: Key, num_shards: u32) -> ShardId {
    (key % u64::from(num_shards)) as ShardId
}

/// System size parameters shared by every participant.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Params {
    /// Byzantine replicas tolerated per shard.
    pub f: u32,
    pub num_shards: u32,
}

impl Params {
    pub const fn new(f: u32, num_shards: u32) -> Self {
        Params { f, num_shards }
    }

    /// Replicas per shard, `5f + 1`.
    pub const fn n(&self) -> usize {
        5 * self.f as usize + 1
    }

    pub const fn f(&self) -> usize {
        self.f as usize
    }

    /// CommitQuorum, `3f + 1`.
    pub const fn commit_quorum(&self) -> usize {
        3 * self.f as usize + 1
    }

    /// AbortQuorum, `f + 1`.
    pub const fn abort_quorum(&self) -> usize {
        self.f as usize + 1
    }

    /// Abort votes that make a durable abort on their own, `3f + 1`.
    pub const fn fast_abort(&self) -> usize {
        3 * self.f as usize + 1
    }

    /// Matching Stage-2 replies forming a certificate, `n - f`.
    pub const fn log_quorum(&self) -> usize {
        4 * self.f as usize + 1
    }

    /// ElectFB messages a fallback leader needs, `4f + 1`.
    pub const fn elect_quorum(&self) -> usize {
        4 * self.f as usize + 1
    }

    pub fn replicas(&self, shard: ShardId) -> impl Iterator<Item = NodeId> {
        (0..self.n() as u32).map(move |i| NodeId::replica(shard, i))
    }

    pub fn all_replicas(&self) -> impl Iterator<Item = NodeId> + '_ {
        (0..self.num_shards).flat_map(move |s| self.replicas(s))
    }

    pub fn is_replica_of(&self, id: NodeId, shard: ShardId) -> bool {
        matches!(id, NodeId::Replica { shard: s, index } if s == shard && (index as usize) < self.n())
    }
}

#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NodeId {
    Replica { shard: ShardId, index: u32 },
    Client(u64),
}

impl NodeId {
    pub const fn replica(shard: ShardId, index: u32) -> Self {
        NodeId::Replica { shard, index }
    }

    pub fn is_client(&self) -> bool {
        matches!(self, NodeId::Client(_))
    }

    pub fn shard(&self) -> Option<ShardId> {
        match self {
            NodeId::Replica { shard, .. } => Some(*shard),
            NodeId::Client(_) => None,
        }
    }

    pub fn replica_index(&self) -> Option<u32> {
        match self {
            NodeId::Replica { index, .. } => Some(*index),
            NodeId::Client(_) => None,
        }
    }

    pub fn client_id(&self) -> Option<u64> {
        match self {
            NodeId::Client(c) => Some(*c),
            NodeId::Replica { .. } => None,
        }
    }
}

impl fmt::Debug for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            NodeId::Replica { shard, index } => write!(f, "R{shard}.{index}"),
            NodeId::Client(c) => write!(f, "C{c}"),
        }
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

impl Encode for NodeId {
    fn encode_into(&self, enc: &mut Encoder) {
        match self {
            NodeId::Replica { shard, index } => {
                enc.put_u8(0);
                enc.put_u32(*shard);
                enc.put_u32(*index);
            }
            NodeId::Client(c) => {
                enc.put_u8(1);
                enc.put_u64(*c);
            }
        }
    }
}

/// Transaction timestamp, ordered lexicographically by `(time, client)`.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default, Serialize, Deserialize)]
pub struct Timestamp {
    pub time: u64,
    pub client: u64,
}

impl Timestamp {
    /// Version of the implicit initial value of every key.
    pub const GENESIS: Timestamp = Timestamp { time: 0, client: 0 };

    pub const fn new(time: u64, client: u64) -> Self {
        Timestamp { time, client }
    }
}

impl fmt::Debug for Timestamp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}@{}", self.time, self.client)
    }
}

impl fmt::Display for Timestamp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

impl Encode for Timestamp {
    fn encode_into(&self, enc: &mut Encoder) {
        enc.put_u64(self.time);
        enc.put_u64(self.client);
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Decision {
    Commit,
    Abort,
}

impl Decision {
    pub fn flip(self) -> Self {
        match self {
            Decision::Commit => Decision::Abort,
            Decision::Abort => Decision::Commit,
        }
    }
}

impl Encode for Decision {
    fn encode_into(&self, enc: &mut Encoder) {
        enc.put_u8(match self {
            Decision::Commit => 1,
            Decision::Abort => 2,
        });
    }
}

/// A transaction's metadata. Its hash is the transaction id.
///
/// Sets are kept sorted and keyed uniquely; build through [`TxnMeta::new`].
#[derive(Clone, Serialize, Deserialize)]
pub struct TxnMeta {
    pub ts: Timestamp,
    pub read_set: Vec<(Key, Timestamp)>,
    pub write_set: Vec<(Key, Value)>,
    pub dep_set: Vec<(Timestamp, Digest)>,
    #[serde(skip)]
    id: OnceLock<Digest>,
}

impl PartialEq for TxnMeta {
    fn eq(&self, other: &Self) -> bool {
        self.ts == other.ts
            && self.read_set == other.read_set
            && self.write_set == other.write_set
            && self.dep_set == other.dep_set
    }
}

impl Eq for TxnMeta {}

impl fmt::Debug for TxnMeta {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("TxnMeta")
            .field("id", &self.id())
            .field("ts", &self.ts)
            .field("reads", &self.read_set)
            .field("writes", &self.write_set.iter().map(|(k, _)| k).collect::<Vec<_>>())
            .field("deps", &self.dep_set)
            .finish()
    }
}

impl TxnMeta {
    /// Normalizes the sets: sorted by key, later duplicates win for writes,
    /// first occurrence wins for reads, deps deduplicated.
    pub fn new(
        ts: Timestamp,
        reads: impl IntoIterator<Item = (Key, Timestamp)>,
        writes: impl IntoIterator<Item = (Key, Value)>,
        deps: impl IntoIterator<Item = (Timestamp, Digest)>,
    ) -> Self {
        let mut read_set: Vec<(Key, Timestamp)> = Vec::new();
        for (k, v) in reads {
            if !read_set.iter().any(|(rk, _)| *rk == k) {
                read_set.push((k, v));
            }
        }
        read_set.sort_by_key(|(k, _)| *k);

        let mut write_set: Vec<(Key, Value)> = Vec::new();
        for (k, v) in writes {
            match write_set.iter_mut().find(|(wk, _)| *wk == k) {
                Some(slot) => slot.1 = v,
                None => write_set.push((k, v)),
            }
        }
        write_set.sort_by_key(|(k, _)| *k);

        let mut dep_set: Vec<(Timestamp, Digest)> = deps.into_iter().collect();
        dep_set.sort();
        dep_set.dedup();

        TxnMeta { ts, read_set, write_set, dep_set, id: OnceLock::new() }
    }

    /// The metadata of the implicit transaction that wrote every key's initial version.
    pub fn genesis() -> Self {
        TxnMeta::new(Timestamp::GENESIS, [], [], [])
    }

    pub fn is_genesis(&self) -> bool {
        self.ts == Timestamp::GENESIS
            && self.read_set.is_empty()
            && self.write_set.is_empty()
            && self.dep_set.is_empty()
    }

    pub fn id(&self) -> Digest {
        *self.id.get_or_init(|| txn_id(self))
    }

    pub fn read_version(&self, key: Key) -> Option<Timestamp> {
        self.read_set.iter().find(|(k, _)| *k == key).map(|(_, v)| *v)
    }

    pub fn write_value(&self, key: Key) -> Option<&Value> {
        self.write_set.iter().find(|(k, _)| *k == key).map(|(_, v)| v)
    }

    pub fn writes(&self, key: Key) -> bool {
        self.write_value(key).is_some()
    }

    /// Sorted, deduplicated shards touched by reads or writes.
    pub fn shards(&self, num_shards: u32) -> Vec<ShardId> {
        let mut s: Vec<ShardId> = self
            .read_set
            .iter()
            .map(|(k, _)| *k)
            .chain(self.write_set.iter().map(|(k, _)| *k))
            .map(|k| shard_of(k, num_shards))
            .collect();
        s.sort_unstable();
        s.dedup();
        s
    }

    pub fn touches_shard(&self, shard: ShardId, num_shards: u32) -> bool {
        self.read_set.iter().any(|(k, _)| shard_of(*k, num_shards) == shard)
            || self.write_set.iter().any(|(k, _)| shard_of(*k, num_shards) == shard)
    }
}

impl Encode for TxnMeta {
    fn encode_into(&self, enc: &mut Encoder) {
        enc.put_u8(tag::TXN_META);
        enc.put(&self.ts);
        enc.put_len(self.read_set.len());
        for (k, v) in &self.read_set {
            enc.put_u64(*k);
            enc.put(v);
        }
        enc.put_len(self.write_set.len());
        for (k, v) in &self.write_set {
            enc.put_u64(*k);
            enc.put_bytes(v);
        }
        enc.put_len(self.dep_set.len());
        for (v, id) in &self.dep_set {
            enc.put(v);
            enc.put(id);
        }
    }
}

/// `id_T`: SHA-256 of the canonical encoding of the metadata.
pub fn txn_id(meta: &TxnMeta) -> Digest {
    crypto::hash(meta.encode().as_slice())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn meta(client: u64) -> TxnMeta {
        TxnMeta::new(
            Timestamp::new(10, client),
            [(3, Timestamp::new(2, 1))],
            [(4, b"x".to_vec())],
            [],
        )
    }

    #[test]
    fn timestamps_order_lexicographically() {
        assert!(Timestamp::new(1, 9) < Timestamp::new(2, 0));
        assert!(Timestamp::new(2, 1) < Timestamp::new(2, 2));
    }

    #[test]
    fn id_is_stable_and_injective() {
        assert_eq!(meta(1).id(), meta(1).id());
        assert_eq!(meta(1).encode(), meta(1).encode());
        assert_ne!(meta(1).id(), meta(2).id());
        let mut more = meta(1).write_set.clone();
        more.push((5, vec![]));
        let m2 = TxnMeta::new(meta(1).ts, meta(1).read_set.clone(), more, []);
        assert_ne!(m2.id(), meta(1).id());
    }

    #[test]
    fn normalization_sorts_and_dedups() {
        let m = TxnMeta::new(
            Timestamp::new(1, 1),
            [(9, Timestamp::GENESIS), (2, Timestamp::GENESIS), (9, Timestamp::new(5, 5))],
            [(7, b"a".to_vec()), (1, b"b".to_vec()), (7, b"c".to_vec())],
            [],
        );
        assert_eq!(m.read_set, vec![(2, Timestamp::GENESIS), (9, Timestamp::GENESIS)]);
        assert_eq!(m.write_set, vec![(1, b"b".to_vec()), (7, b"c".to_vec())]);
        assert_eq!(m.shards(3), vec![0, 1, 2]);
    }
}
