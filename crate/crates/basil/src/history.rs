//! The append-only run record consumed by the verifier and metrics.
//!
//! Serialized as newline-delimited JSON: a header line followed by one
//! `{"t": tick, "ev": ...}` record per event.

use std::collections::BTreeSet;
use std::io::{BufRead, Write};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::cert::{AbortBacking, CertifiedTxn};
use crate::crypto::Digest;
use crate::messages::VersionRef;
use crate::types::{Decision, Key, NodeId, ShardId, Timestamp, View};
use crate::Error;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Event {
    TxnBegin {
        client: u64,
        ts: Timestamp,
        attempt: u32,
    },
    ReadServed {
        replica: NodeId,
        client: NodeId,
        key: Key,
        req_ts: Timestamp,
        committed: Option<VersionRef>,
        prepared: Option<VersionRef>,
    },
    ReadAdopted {
        client: u64,
        txn_ts: Timestamp,
        key: Key,
        version: Timestamp,
        writer: Digest,
        prepared: bool,
        /// Replicas whose replies backed the adopted version.
        sources: Vec<NodeId>,
        /// Committed version each replier reported, valid or not.
        committed_reports: Vec<(NodeId, Timestamp)>,
    },
    ReadFailed {
        client: u64,
        txn_ts: Timestamp,
        key: Key,
    },
    Stage1Sent {
        client: u64,
        txn_id: Digest,
        ts: Timestamp,
        shards: Vec<ShardId>,
    },
    VoteCast {
        replica: NodeId,
        txn_id: Digest,
        vote: Decision,
        conflict: bool,
    },
    Stage2Sent {
        client: u64,
        txn_id: Digest,
        decision: Decision,
        equivocated: bool,
    },
    Logged {
        replica: NodeId,
        txn_id: Digest,
        decision: Decision,
        view: View,
        backing: Option<AbortBacking>,
    },
    ViewChanged {
        replica: NodeId,
        txn_id: Digest,
        from: View,
        to: View,
    },
    ElectionWon {
        leader: NodeId,
        txn_id: Digest,
        view: View,
        decision: Decision,
    },
    Finalized {
        replica: NodeId,
        txn_id: Digest,
        decision: Decision,
    },
    /// A certificate as first accepted by some participant.
    Certificate {
        txn: Arc<CertifiedTxn>,
    },
    CertAccepted {
        node: NodeId,
        txn_id: Digest,
        decision: Decision,
    },
    DecisionReported {
        client: u64,
        txn_id: Digest,
        ts: Timestamp,
        decision: Decision,
        fast: bool,
        /// From the first attempt's begin to the decision.
        latency: u64,
        /// From this attempt's Stage-1 send to the decision.
        prepare_latency: u64,
    },
    LocalAbort {
        client: u64,
        ts: Timestamp,
        reason: String,
    },
    Interested {
        client: u64,
        txn_id: Digest,
    },
    RecoveryStarted {
        client: u64,
        txn_id: Digest,
    },
    RpSent {
        client: u64,
        txn_id: Digest,
    },
    FallbackInvoked {
        client: u64,
        txn_id: Digest,
        views: Vec<View>,
    },
    Misbehavior {
        observer: NodeId,
        suspect: NodeId,
        what: String,
    },
    InvariantViolation {
        what: String,
    },
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Record {
    pub t: u64,
    pub ev: Event,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Roster {
    pub byz_replicas: Vec<(NodeId, String)>,
    pub byz_clients: Vec<(u64, String)>,
    pub clients: Vec<u64>,
}

impl Roster {
    pub fn is_byz(&self, id: NodeId) -> bool {
        match id {
            NodeId::Client(c) => self.byz_clients.iter().any(|(x, _)| *x == c),
            r => self.byz_replicas.iter().any(|(x, _)| *x == r),
        }
    }

    pub fn correct_clients(&self) -> Vec<u64> {
        self.clients.iter().copied().filter(|c| !self.is_byz(NodeId::Client(*c))).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Header {
    pub config: serde_json::Value,
    pub roster: Roster,
    /// Simulated time at which the run stopped.
    pub end_time: u64,
}

#[derive(Clone, Debug, Default)]
pub struct HistoryLog {
    pub header: Option<Header>,
    pub records: Vec<Record>,
    certs_seen: BTreeSet<(Digest, Decision)>,
}

impl HistoryLog {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, t: u64, ev: Event) {
        if let Event::Certificate { txn } = &ev {
            if !self.certs_seen.insert((txn.id(), txn.cert.decision)) {
                return;
            }
        }
        self.records.push(Record { t, ev });
    }

    pub fn events(&self) -> impl Iterator<Item = &Event> {
        self.records.iter().map(|r| &r.ev)
    }

    pub fn write_ndjson<W: Write>(&self, mut w: W) -> Result<(), Error> {
        if let Some(h) = &self.header {
            serde_json::to_writer(&mut w, h).map_err(|e| Error::Log(e.to_string()))?;
            w.write_all(b"\n")?;
        }
        for r in &self.records {
            serde_json::to_writer(&mut w, r).map_err(|e| Error::Log(e.to_string()))?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn read_ndjson<R: BufRead>(r: R) -> Result<Self, Error> {
        let mut log = HistoryLog::new();
        for (i, line) in r.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            if i == 0 {
                let h: Header = serde_json::from_str(&line)
                    .map_err(|e| Error::Log(format!("line 1 (header): {e}")))?;
                log.header = Some(h);
                continue;
            }
            let rec: Record =
                serde_json::from_str(&line).map_err(|e| Error::Log(format!("line {}: {e}", i + 1)))?;
            log.push(rec.t, rec.ev);
        }
        Ok(log)
    }
}
