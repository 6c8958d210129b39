//! Stage-1 vote classification, decision certificates and their validity checks.

use std::collections::BTreeSet;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::crypto::{Digest, VerifyCtx};
use crate::messages::{P1rBody, P2rBody, Signed};
use crate::types::{Decision, Key, NodeId, Params, ShardId, TxnMeta, View};
use crate::Error;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BundleKind {
    /// Durable on its own.
    FastCert,
    /// Must be logged in Stage 2 before it counts.
    SlowTally,
}

/// One shard's Stage-1 outcome for a transaction.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct VoteBundle {
    pub txn_id: Digest,
    pub shard: ShardId,
    pub decision: Decision,
    pub kind: BundleKind,
    pub votes: Vec<Signed<P1rBody>>,
    /// A committed conflicting transaction, for the conflict-certificate abort.
    pub conflict: Option<Arc<CertifiedTxn>>,
}

impl VoteBundle {
    pub fn is_fast(&self) -> bool {
        self.kind == BundleKind::FastCert
    }

    pub fn voters(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.votes.iter().map(|v| v.body.replica)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Classification {
    NeedMore,
    Bundle(VoteBundle),
}

/// Pick the Stage-1 case met by `replies` (all already verified, one shard).
///
/// Priority: conflict-certificate abort, fast commit, fast abort, slow commit,
/// slow abort. `conflict` must already be known valid for this transaction.
pub fn classify_votes(
    params: Params,
    txn_id: Digest,
    shard: ShardId,
    replies: &[Signed<P1rBody>],
    conflict: Option<Arc<CertifiedTxn>>,
) -> Result<Classification, Error> {
    let mut seen = BTreeSet::new();
    for r in replies {
        if r.body.txn_id != txn_id || r.body.replica.shard() != Some(shard) {
            return Err(Error::InvalidArgument(format!(
                "reply from {} does not belong to this shard/txn",
                r.body.replica
            )));
        }
        if !seen.insert(r.body.replica) {
            return Err(Error::InvalidArgument(format!("duplicate reply from {}", r.body.replica)));
        }
    }
    let of = |d: Decision| -> Vec<Signed<P1rBody>> {
        replies.iter().filter(|r| r.body.vote == d).cloned().collect()
    };
    let commits = of(Decision::Commit);
    let aborts = of(Decision::Abort);
    let bundle = |decision, kind, votes, conflict| {
        Classification::Bundle(VoteBundle { txn_id, shard, decision, kind, votes, conflict })
    };
    Ok(if conflict.is_some() {
        bundle(Decision::Abort, BundleKind::FastCert, aborts, conflict)
    } else if commits.len() >= params.n() {
        bundle(Decision::Commit, BundleKind::FastCert, commits, None)
    } else if aborts.len() >= params.fast_abort() {
        bundle(Decision::Abort, BundleKind::FastCert, aborts, None)
    } else if commits.len() >= params.commit_quorum() {
        bundle(Decision::Commit, BundleKind::SlowTally, commits, None)
    } else if aborts.len() >= params.abort_quorum() {
        bundle(Decision::Abort, BundleKind::SlowTally, aborts, None)
    } else {
        Classification::NeedMore
    })
}

/// Keys on which `t` conflicts with the committed `other`.
///
/// Either `t` read a key at a version older than `other`'s write while
/// `other` precedes `t`, or `t` writes a key that `other` read at a version
/// older than `t` while `t` precedes `other`.
pub fn conflict_keys(t: &TxnMeta, other: &TxnMeta) -> Vec<Key> {
    let mut keys = Vec::new();
    for (k, rv) in &t.read_set {
        if other.writes(*k) && *rv < other.ts && other.ts < t.ts {
            keys.push(*k);
        }
    }
    for (k, _) in &t.write_set {
        if let Some(rv) = other.read_version(*k) {
            if rv < t.ts && t.ts < other.ts {
                keys.push(*k);
            }
        }
    }
    keys
}

/// Verify a shard bundle against the transaction it claims to be about.
pub fn verify_bundle(bundle: &VoteBundle, meta: &TxnMeta, params: Params, ctx: &mut VerifyCtx) -> bool {
    if bundle.txn_id != meta.id() || !meta.touches_shard(bundle.shard, params.num_shards) {
        return false;
    }
    if let Some(c) = &bundle.conflict {
        // The carrying votes are transport only; the certificate decides.
        let valid = bundle.decision == Decision::Abort
            && bundle.kind == BundleKind::FastCert
            && c.cert.decision == Decision::Commit
            && conflict_keys(meta, &c.meta)
                .into_iter()
                .any(|k| crate::types::shard_of(k, params.num_shards) == bundle.shard)
            && verify_cert(&c.cert, &c.meta, params, ctx);
        if valid {
            return true;
        }
    }
    let mut seen = BTreeSet::new();
    for v in &bundle.votes {
        if v.body.txn_id != bundle.txn_id
            || v.body.vote != bundle.decision
            || !params.is_replica_of(v.body.replica, bundle.shard)
            || !seen.insert(v.body.replica)
        {
            return false;
        }
    }
    let count = seen.len();
    let threshold_ok = match (bundle.kind, bundle.decision) {
        (BundleKind::FastCert, Decision::Commit) => count == params.n(),
        (BundleKind::FastCert, Decision::Abort) => count >= params.fast_abort(),
        (BundleKind::SlowTally, Decision::Commit) => {
            count >= params.commit_quorum() && count < params.n()
        }
        (BundleKind::SlowTally, Decision::Abort) => {
            count >= params.abort_quorum() && count < params.fast_abort()
        }
    };
    threshold_ok && bundle.votes.iter().all(|v| v.verify(ctx))
}

/// Whether a client's Stage-2 decision is justified by its tallies: a Commit
/// bundle for every shard, or an Abort bundle for some shard.
pub fn validate_p2(
    decision: Decision,
    tallies: &[VoteBundle],
    meta: &TxnMeta,
    params: Params,
    ctx: &mut VerifyCtx,
) -> Option<AbortBacking> {
    match decision {
        Decision::Commit => {
            let ok = meta.shards(params.num_shards).into_iter().all(|s| {
                tallies.iter().any(|b| {
                    b.shard == s && b.decision == Decision::Commit && verify_bundle(b, meta, params, ctx)
                })
            });
            ok.then(AbortBacking::default)
        }
        Decision::Abort => tallies
            .iter()
            .find(|b| b.decision == Decision::Abort && verify_bundle(b, meta, params, ctx))
            .map(AbortBacking::of_bundle),
    }
}

/// What an abort rested on: the distinct abort voters, or a conflicting commit.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AbortBacking {
    pub voters: Vec<NodeId>,
    pub conflict: bool,
}

impl AbortBacking {
    pub fn of_bundle(b: &VoteBundle) -> Self {
        AbortBacking { voters: b.voters().collect(), conflict: b.conflict.is_some() }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CertEvidence {
    /// The implicit initial version of every key.
    Genesis,
    /// Fast path: every shard's FastCert-Commit, or one shard's FastCert-Abort.
    Fast { bundles: Vec<VoteBundle> },
    /// Slow path: `n - f` matching Stage-2 replies from the logging shard.
    Slow { shard: ShardId, replies: Vec<Signed<P2rBody>> },
}

/// A transferable proof of a transaction's global decision.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DecisionCert {
    pub txn_id: Digest,
    pub decision: Decision,
    pub evidence: CertEvidence,
}

impl DecisionCert {
    pub fn genesis() -> Self {
        DecisionCert {
            txn_id: TxnMeta::genesis().id(),
            decision: Decision::Commit,
            evidence: CertEvidence::Genesis,
        }
    }

    pub fn is_fast(&self) -> bool {
        matches!(self.evidence, CertEvidence::Fast { .. })
    }

    /// View of the logged decision for slow certificates.
    pub fn view(&self) -> Option<View> {
        match &self.evidence {
            CertEvidence::Slow { replies, .. } => replies.first().map(|r| r.body.view_decision),
            _ => None,
        }
    }
}

/// A transaction's metadata together with its decision certificate.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CertifiedTxn {
    pub meta: Arc<TxnMeta>,
    pub cert: DecisionCert,
}

impl CertifiedTxn {
    pub fn genesis() -> Self {
        CertifiedTxn { meta: Arc::new(TxnMeta::genesis()), cert: DecisionCert::genesis() }
    }

    pub fn id(&self) -> Digest {
        self.cert.txn_id
    }

    pub fn verify(&self, params: Params, ctx: &mut VerifyCtx) -> bool {
        verify_cert(&self.cert, &self.meta, params, ctx)
    }
}

/// Full certificate validity check.
pub fn verify_cert(cert: &DecisionCert, meta: &TxnMeta, params: Params, ctx: &mut VerifyCtx) -> bool {
    if cert.txn_id != meta.id() {
        return false;
    }
    match &cert.evidence {
        CertEvidence::Genesis => meta.is_genesis() && cert.decision == Decision::Commit,
        CertEvidence::Fast { bundles } => match cert.decision {
            Decision::Commit => {
                let shards = meta.shards(params.num_shards);
                bundles.len() == shards.len()
                    && !shards.is_empty()
                    && shards.iter().zip(sorted_shards(bundles)).all(|(a, b)| *a == b)
                    && bundles.iter().all(|b| {
                        b.kind == BundleKind::FastCert
                            && b.decision == Decision::Commit
                            && verify_bundle(b, meta, params, ctx)
                    })
            }
            Decision::Abort => {
                bundles.len() == 1
                    && bundles[0].kind == BundleKind::FastCert
                    && bundles[0].decision == Decision::Abort
                    && verify_bundle(&bundles[0], meta, params, ctx)
            }
        },
        CertEvidence::Slow { shard, replies } => {
            let Ok(log_shard) = logging_shard(meta, &meta.shards(params.num_shards)) else {
                return false;
            };
            if *shard != log_shard || replies.len() < params.log_quorum() {
                return false;
            }
            let view = replies[0].body.view_decision;
            let mut seen = BTreeSet::new();
            for r in replies {
                if r.body.txn_id != cert.txn_id
                    || r.body.decision != Some(cert.decision)
                    || r.body.view_decision != view
                    || !params.is_replica_of(r.body.replica, *shard)
                    || !seen.insert(r.body.replica)
                {
                    return false;
                }
            }
            replies.iter().all(|r| r.verify(ctx))
        }
    }
}

fn sorted_shards(bundles: &[VoteBundle]) -> Vec<ShardId> {
    let mut s: Vec<ShardId> = bundles.iter().map(|b| b.shard).collect();
    s.sort_unstable();
    s
}

/// The shard that logs a slow-path decision: `shards[id_T mod |shards|]`.
pub fn logging_shard(meta: &TxnMeta, shards: &[ShardId]) -> Result<ShardId, Error> {
    if shards.is_empty() {
        return Err(Error::InvalidArgument("empty shard list".into()));
    }
    Ok(shards[meta.id().mod_u64(shards.len() as u64) as usize])
}

/// Index of the fallback leader for `view`: `(view + id_T mod n) mod n`.
pub fn leader_index(view: View, txn_id: &Digest, n: usize) -> u32 {
    let n = n as u64;
    ((view % n + txn_id.mod_u64(n)) % n) as u32
}

/// Majority of an odd-sized set of decisions (ties go to Abort).
pub fn majority(decisions: impl IntoIterator<Item = Decision>) -> Decision {
    let (mut c, mut a) = (0usize, 0usize);
    for d in decisions {
        match d {
            Decision::Commit => c += 1,
            Decision::Abort => a += 1,
        }
    }
    if c > a {
        Decision::Commit
    } else {
        Decision::Abort
    }
}
