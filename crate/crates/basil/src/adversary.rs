//! Byzantine behaviors injected by the simulator.
//!
//! Replica behaviors rewrite a Byzantine replica's unsigned outbound messages
//! before its signing step, so whatever they emit carries its own signature.
//! Client behaviors are implemented inside the client state machine.

use std::cell::RefCell;
use std::collections::{BTreeMap, BTreeSet};
use std::rc::Rc;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::cert::majority;
use crate::crypto::{Digest, Keyring};
use crate::messages::{DecFbBody, ElectFbBody, Message, P1rBody, Signed, VersionRef};
use crate::replica::Replica;
use crate::types::{Decision, NodeId, ShardId, Timestamp, TxnMeta};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ClientBehavior {
    /// Send Stage 1, then abandon the transaction.
    StallEarly,
    /// Finish Stage 1 (and Stage 2 when slow) but never write back.
    StallLate,
    /// Equivocate in Stage 2 when the received votes happen to allow it.
    EquivReal,
    /// Equivocate in Stage 2 with votes signed by colluding Byzantine replicas,
    /// after planting a read timestamp that makes one correct replica vote Abort.
    EquivForced,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ReplicaBehavior {
    /// Never answer clients.
    Mute,
    /// Invert every Stage-1 vote.
    VoteFlip,
    /// Serve the initial version for every read.
    StaleRead,
    /// Serve a fabricated prepared version for every read.
    BogusVersion,
    /// Vote Commit to even-numbered clients and Abort to odd ones.
    EquivocateP1r,
    /// As fallback leader, stay silent or send conflicting decisions.
    BadFallbackLeader,
}

impl ClientBehavior {
    pub const ALL: [ClientBehavior; 4] =
        [ClientBehavior::StallEarly, ClientBehavior::StallLate, ClientBehavior::EquivReal, ClientBehavior::EquivForced];

    pub fn name(self) -> &'static str {
        match self {
            ClientBehavior::StallEarly => "stall-early",
            ClientBehavior::StallLate => "stall-late",
            ClientBehavior::EquivReal => "equiv-real",
            ClientBehavior::EquivForced => "equiv-forced",
        }
    }
}

impl ReplicaBehavior {
    pub const ALL: [ReplicaBehavior; 6] = [
        ReplicaBehavior::Mute,
        ReplicaBehavior::VoteFlip,
        ReplicaBehavior::StaleRead,
        ReplicaBehavior::BogusVersion,
        ReplicaBehavior::EquivocateP1r,
        ReplicaBehavior::BadFallbackLeader,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ReplicaBehavior::Mute => "mute",
            ReplicaBehavior::VoteFlip => "vote-flip",
            ReplicaBehavior::StaleRead => "stale-read",
            ReplicaBehavior::BogusVersion => "bogus-version",
            ReplicaBehavior::EquivocateP1r => "equivocate-p1r",
            ReplicaBehavior::BadFallbackLeader => "bad-fallback-leader",
        }
    }
}

/// Client id stamped on fabricated versions.
pub const FORGER: u64 = u64::MAX;

/// State shared by all Byzantine participants of one simulation.
#[derive(Debug)]
pub struct AdversaryBoard {
    pub keyring: Arc<Keyring>,
    pub byz_replicas: BTreeSet<NodeId>,
    /// Transactions under a forced equivocation, with their owner.
    pub forced: BTreeMap<Digest, u64>,
}

pub type SharedBoard = Rc<RefCell<AdversaryBoard>>;

impl AdversaryBoard {
    pub fn new(keyring: Arc<Keyring>, byz_replicas: impl IntoIterator<Item = NodeId>) -> Self {
        AdversaryBoard { keyring, byz_replicas: byz_replicas.into_iter().collect(), forced: BTreeMap::new() }
    }

    pub fn byz_in_shard(&self, shard: ShardId) -> Vec<NodeId> {
        self.byz_replicas.iter().copied().filter(|r| r.shard() == Some(shard)).collect()
    }

    /// A Stage-1 reply signed by Byzantine replica `replica` on the adversary's behalf.
    pub fn forge_p1r(&self, txn_id: Digest, replica: NodeId, vote: Decision) -> Option<Signed<P1rBody>> {
        if !self.byz_replicas.contains(&replica) {
            return None;
        }
        let key = self.keyring.signer(replica)?;
        Some(Signed::sign(P1rBody { txn_id, replica, vote }, &key))
    }
}

fn set_vote(body: &mut P1rBody, vote: Decision, conflict: &mut Option<Arc<crate::cert::CertifiedTxn>>) {
    if body.vote != vote {
        body.vote = vote;
        *conflict = None;
    }
}

/// Rewrite the unsigned outbound messages of Byzantine replica `replica`.
pub fn filter_replica_sends(
    behavior: Option<ReplicaBehavior>,
    replica: &Replica,
    board: &AdversaryBoard,
    sends: Vec<(NodeId, Message)>,
) -> Vec<(NodeId, Message)> {
    let mut out = Vec::with_capacity(sends.len());
    for (to, mut msg) in sends {
        if behavior == Some(ReplicaBehavior::Mute) && to.is_client() {
            continue;
        }
        let client = to.client_id();
        let vote_for = |txn: &Digest, own: Decision| -> Decision {
            if let (Some(owner), Some(c)) = (board.forced.get(txn), client) {
                if *owner != c {
                    return Decision::Abort;
                }
            }
            match (behavior, client) {
                (Some(ReplicaBehavior::VoteFlip), _) => own.flip(),
                (Some(ReplicaBehavior::EquivocateP1r), Some(c)) if c % 2 == 0 => Decision::Commit,
                (Some(ReplicaBehavior::EquivocateP1r), Some(_)) => Decision::Abort,
                _ => own,
            }
        };
        match &mut msg {
            Message::P1Reply(r) => {
                let v = vote_for(&r.p1r.body.txn_id, r.p1r.body.vote);
                set_vote(&mut r.p1r.body, v, &mut r.conflict);
            }
            Message::RecoveryReply(rr) => {
                if let Some(p1) = rr.p1.as_mut() {
                    let v = vote_for(&p1.p1r.body.txn_id, p1.p1r.body.vote);
                    set_vote(&mut p1.p1r.body, v, &mut p1.conflict);
                }
            }
            Message::ReadReply { reply, committed, prepared } => match behavior {
                Some(ReplicaBehavior::StaleRead) => {
                    let genesis = TxnMeta::genesis();
                    reply.body.committed = Some(VersionRef { ts: Timestamp::GENESIS, txn_id: genesis.id() });
                    reply.body.prepared = None;
                    *committed = None;
                    *prepared = None;
                }
                Some(ReplicaBehavior::BogusVersion) => {
                    let ts = Timestamp::new(reply.body.req_ts.time.saturating_sub(1).max(1), FORGER);
                    let fake = TxnMeta::new(ts, vec![], vec![(reply.body.key, b"bogus".to_vec())], vec![]);
                    reply.body.prepared = Some(VersionRef { ts, txn_id: fake.id() });
                    *prepared = Some(Arc::new(fake));
                }
                _ => {}
            },
            Message::DecFb { dec, .. } if behavior == Some(ReplicaBehavior::BadFallbackLeader) => {
                // Broadcasts repeat per recipient; handle the whole batch once.
                let (txn_id, view) = (dec.body.txn_id, dec.body.view);
                if out.iter().any(|(_, m): &(NodeId, Message)| {
                    matches!(m, Message::DecFb { dec, .. } if dec.body.txn_id == txn_id && dec.body.view == view)
                }) {
                    continue;
                }
                out.extend(conflicting_decisions(replica, txn_id, view));
                continue;
            }
            _ => {}
        }
        out.push((to, msg));
    }
    out
}

/// Split the shard between a Commit and an Abort decision built from
/// different subsets of the buffered elections, or stay silent if every
/// subset has the same majority.
fn conflicting_decisions(replica: &Replica, txn_id: Digest, view: u64) -> Vec<(NodeId, Message)> {
    let params = replica.params();
    let q = params.elect_quorum();
    let Some(entry) = replica.txn(&txn_id) else { return Vec::new() };
    let elects = entry.elects_for(view);
    let pick = |want: Decision| -> Vec<Signed<ElectFbBody>> {
        let mut v: Vec<_> = elects.iter().filter(|e| e.body.decision == want).cloned().collect();
        v.extend(elects.iter().filter(|e| e.body.decision != want).cloned());
        v.truncate(q);
        v
    };
    let (c, a) = (pick(Decision::Commit), pick(Decision::Abort));
    if c.len() < q || majority(c.iter().map(|e| e.body.decision)) != Decision::Commit {
        return Vec::new();
    }
    if majority(a.iter().map(|e| e.body.decision)) != Decision::Abort {
        return Vec::new();
    }
    let shard = replica.id.shard().expect("replica");
    let mut out = Vec::new();
    for (i, to) in params.replicas(shard).enumerate() {
        let (decision, elects) = if i % 2 == 0 { (Decision::Commit, &c) } else { (Decision::Abort, &a) };
        let dec = Signed::pending(DecFbBody { txn_id, leader: replica.id, decision, view });
        out.push((to, Message::DecFb { dec, elects: elects.clone() }));
    }
    out
}
