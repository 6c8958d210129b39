//! Wire messages and the signed bodies they carry.
//!
//! Replicas sign bodies either directly or as a leaf of a Merkle batch.
//! Client to replica traffic is authenticated by the channel.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::cert::{CertifiedTxn, VoteBundle};
use crate::codec::{tag, CanonicalBytes, Encode, Encoder};
use crate::crypto::{Digest, Signature, SigningKey, VerifyCtx};
use crate::merkle::{verify_batched_reply, MerkleProof};
use crate::types::{Decision, Key, NodeId, Timestamp, TxnMeta, View};

/// A body that some node signs. `signer` names the identity whose key must verify it.
pub trait SignedBody: Encode {
    fn signer(&self) -> NodeId;
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Auth {
    /// Not yet signed; filled in when the sender's batch is flushed.
    Pending,
    Direct(Signature),
    Batched { root: Digest, sig: Signature, proof: MerkleProof },
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Signed<T> {
    pub body: T,
    pub auth: Auth,
}

impl<T: SignedBody> Signed<T> {
    pub fn pending(body: T) -> Self {
        Signed { body, auth: Auth::Pending }
    }

    pub fn sign(body: T, key: &SigningKey) -> Self {
        let sig = key.sign(body.encode().as_slice());
        Signed { body, auth: Auth::Direct(sig) }
    }

    pub fn signer(&self) -> NodeId {
        self.body.signer()
    }

    pub fn verify(&self, ctx: &mut VerifyCtx) -> bool {
        let bytes = self.body.encode();
        match &self.auth {
            Auth::Pending => false,
            Auth::Direct(sig) => ctx.verify_direct(self.signer(), bytes.as_slice(), sig),
            Auth::Batched { root, sig, proof } => {
                verify_batched_reply(bytes.as_slice(), proof, root, sig, self.signer(), ctx)
            }
        }
    }

    /// The bytes to sign and the slot to write the result into.
    pub fn signing_slot(&mut self) -> Option<(CanonicalBytes, &mut Auth)> {
        match self.auth {
            Auth::Pending => Some((self.body.encode(), &mut self.auth)),
            _ => None,
        }
    }
}

/// A version reference: the writer's timestamp and id.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct VersionRef {
    pub ts: Timestamp,
    pub txn_id: Digest,
}

impl Encode for VersionRef {
    fn encode_into(&self, enc: &mut Encoder) {
        enc.put(&self.ts);
        enc.put(&self.txn_id);
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReadReplyBody {
    pub replica: NodeId,
    pub key: Key,
    pub req_ts: Timestamp,
    pub committed: Option<VersionRef>,
    pub prepared: Option<VersionRef>,
}

impl Encode for ReadReplyBody {
    fn encode_into(&self, enc: &mut Encoder) {
        enc.put_u8(tag::READ_REPLY);
        enc.put(&self.replica);
        enc.put_u64(self.key);
        enc.put(&self.req_ts);
        enc.put_option(self.committed.as_ref());
        enc.put_option(self.prepared.as_ref());
    }
}

impl SignedBody for ReadReplyBody {
    fn signer(&self) -> NodeId {
        self.replica
    }
}

/// Stage-1 reply body. The signature covers the transaction id and vote.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct P1rBody {
    pub txn_id: Digest,
    pub replica: NodeId,
    pub vote: Decision,
}

impl Encode for P1rBody {
    fn encode_into(&self, enc: &mut Encoder) {
        enc.put_u8(tag::P1_REPLY);
        enc.put(&self.txn_id);
        enc.put(&self.replica);
        enc.put(&self.vote);
    }
}

impl SignedBody for P1rBody {
    fn signer(&self) -> NodeId {
        self.replica
    }
}

/// Stage-2 reply body: a replica's logged decision (if any) and its views.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct P2rBody {
    pub txn_id: Digest,
    pub replica: NodeId,
    pub decision: Option<Decision>,
    pub view_decision: View,
    pub view_current: View,
}

impl Encode for P2rBody {
    fn encode_into(&self, enc: &mut Encoder) {
        enc.put_u8(tag::P2_REPLY);
        enc.put(&self.txn_id);
        enc.put(&self.replica);
        enc.put_option(self.decision.as_ref());
        enc.put_u64(self.view_decision);
        enc.put_u64(self.view_current);
    }
}

impl SignedBody for P2rBody {
    fn signer(&self) -> NodeId {
        self.replica
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ElectFbBody {
    pub txn_id: Digest,
    pub replica: NodeId,
    pub decision: Decision,
    pub view: View,
}

impl Encode for ElectFbBody {
    fn encode_into(&self, enc: &mut Encoder) {
        enc.put_u8(tag::ELECT_FB);
        enc.put(&self.txn_id);
        enc.put(&self.replica);
        enc.put(&self.decision);
        enc.put_u64(self.view);
    }
}

impl SignedBody for ElectFbBody {
    fn signer(&self) -> NodeId {
        self.replica
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct DecFbBody {
    pub txn_id: Digest,
    pub leader: NodeId,
    pub decision: Decision,
    pub view: View,
}

impl Encode for DecFbBody {
    fn encode_into(&self, enc: &mut Encoder) {
        enc.put_u8(tag::DEC_FB);
        enc.put(&self.txn_id);
        enc.put(&self.leader);
        enc.put(&self.decision);
        enc.put_u64(self.view);
    }
}

impl SignedBody for DecFbBody {
    fn signer(&self) -> NodeId {
        self.leader
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct P1Reply {
    pub p1r: Signed<P1rBody>,
    /// A committed transaction that conflicts with the voted one. Unsigned:
    /// the certificate inside is what carries weight.
    pub conflict: Option<Arc<CertifiedTxn>>,
    /// The prepared, undecided transaction behind an Abort vote, so that the
    /// client can try to finish it. Unsigned hint.
    #[serde(default)]
    pub blocker: Option<Arc<TxnMeta>>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RecoveryReply {
    pub txn_id: Digest,
    pub cert: Option<Arc<CertifiedTxn>>,
    pub p1: Option<P1Reply>,
    pub p2r: Option<Signed<P2rBody>>,
    /// Dependencies the replica is still waiting on before it can vote.
    pub pending_deps: Vec<Arc<TxnMeta>>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Message {
    ReadRequest {
        key: Key,
        ts: Timestamp,
    },
    ReadReply {
        reply: Signed<ReadReplyBody>,
        committed: Option<Arc<CertifiedTxn>>,
        prepared: Option<Arc<TxnMeta>>,
    },
    P1 {
        meta: Arc<TxnMeta>,
    },
    P1Reply(P1Reply),
    P2 {
        meta: Arc<TxnMeta>,
        decision: Decision,
        tallies: Vec<VoteBundle>,
        view: View,
    },
    P2Reply(Signed<P2rBody>),
    Writeback(Arc<CertifiedTxn>),
    AbortNotice {
        ts: Timestamp,
        keys: Vec<Key>,
    },
    /// Recovery Prepare: a resent P1 from any interested client.
    Rp {
        meta: Arc<TxnMeta>,
    },
    RecoveryReply(RecoveryReply),
    InvokeFb {
        meta: Arc<TxnMeta>,
        views: Vec<Signed<P2rBody>>,
    },
    ElectFb {
        meta: Arc<TxnMeta>,
        elect: Signed<ElectFbBody>,
    },
    DecFb {
        dec: Signed<DecFbBody>,
        elects: Vec<Signed<ElectFbBody>>,
    },
}

impl Message {
    pub fn kind(&self) -> &'static str {
        match self {
            Message::ReadRequest { .. } => "read",
            Message::ReadReply { .. } => "read_reply",
            Message::P1 { .. } => "p1",
            Message::P1Reply(_) => "p1_reply",
            Message::P2 { .. } => "p2",
            Message::P2Reply(_) => "p2_reply",
            Message::Writeback(_) => "writeback",
            Message::AbortNotice { .. } => "abort",
            Message::Rp { .. } => "rp",
            Message::RecoveryReply(_) => "rp_reply",
            Message::InvokeFb { .. } => "invoke_fb",
            Message::ElectFb { .. } => "elect_fb",
            Message::DecFb { .. } => "dec_fb",
        }
    }

    /// Signing slots still waiting for the sender's signature.
    pub fn signing_slots(&mut self) -> Vec<(CanonicalBytes, &mut Auth)> {
        let mut out = Vec::new();
        match self {
            Message::ReadReply { reply, .. } => out.extend(reply.signing_slot()),
            Message::P1Reply(r) => out.extend(r.p1r.signing_slot()),
            Message::P2Reply(r) => out.extend(r.signing_slot()),
            Message::RecoveryReply(r) => {
                if let Some(p1) = r.p1.as_mut() {
                    out.extend(p1.p1r.signing_slot());
                }
                if let Some(p2r) = r.p2r.as_mut() {
                    out.extend(p2r.signing_slot());
                }
            }
            Message::ElectFb { elect, .. } => out.extend(elect.signing_slot()),
            Message::DecFb { dec, .. } => out.extend(dec.signing_slot()),
            _ => {}
        }
        out
    }
}
