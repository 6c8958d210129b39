use std::sync::Arc;

use basil::cert::{
    classify_votes, conflict_keys, leader_index, logging_shard, majority, verify_cert, BundleKind, CertEvidence,
    Classification, DecisionCert, VoteBundle,
};
use basil::crypto::{Digest, Keyring, SignatureScheme, VerifyCtx};
use basil::messages::{P1rBody, P2rBody, Signed};
use basil::types::{shard_of, Decision, NodeId, Params, Timestamp, TxnMeta};
use proptest::prelude::*;

fn ring(p: Params) -> Arc<Keyring> {
    Arc::new(Keyring::new(SignatureScheme::Mock, 9, p.all_replicas()))
}

fn vote(ring: &Keyring, txn_id: Digest, r: NodeId, d: Decision) -> Signed<P1rBody> {
    Signed::sign(P1rBody { txn_id, replica: r, vote: d }, &ring.signer(r).unwrap())
}

fn p2r(ring: &Keyring, txn_id: Digest, r: NodeId, d: Decision, view: u64) -> Signed<P2rBody> {
    let body = P2rBody { txn_id, replica: r, decision: Some(d), view_decision: view, view_current: view };
    Signed::sign(body, &ring.signer(r).unwrap())
}

fn meta_on(keys: &[u64]) -> TxnMeta {
    TxnMeta::new(Timestamp::new(5, 1), [], keys.iter().map(|k| (*k, vec![1])), [])
}

#[test]
fn quorum_sizes() {
    // (f, n, commit quorum, abort quorum, fast abort, log quorum)
    let table = [(1, 6, 4, 2, 4, 5), (2, 11, 7, 3, 7, 9), (3, 16, 10, 4, 10, 13)];
    for (f, n, cq, aq, fa, lq) in table {
        let p = Params::new(f, 1);
        assert_eq!(
            (p.n(), p.commit_quorum(), p.abort_quorum(), p.fast_abort(), p.log_quorum(), p.elect_quorum()),
            (n, cq, aq, fa, lq, lq)
        );
    }
}

// Expected outcome of a single shard's vote counts, from the priority table.
fn oracle_class(f: usize, commits: usize, aborts: usize) -> Option<(Decision, BundleKind)> {
    let n = 5 * f + 1;
    if commits == n {
        Some((Decision::Commit, BundleKind::FastCert))
    } else if aborts >= 3 * f + 1 {
        Some((Decision::Abort, BundleKind::FastCert))
    } else if commits >= 3 * f + 1 {
        Some((Decision::Commit, BundleKind::SlowTally))
    } else if aborts > f {
        Some((Decision::Abort, BundleKind::SlowTally))
    } else {
        None
    }
}

proptest! {
    #[test]
    fn classification_follows_priority(f in 1u32..=2, votes in prop::collection::vec(prop::option::of(any::<bool>()), 11)) {
        let p = Params::new(f, 1);
        let ring = ring(p);
        let m = meta_on(&[0]);
        let replies: Vec<_> = p
            .replicas(0)
            .zip(&votes)
            .filter_map(|(r, v)| v.map(|c| vote(&ring, m.id(), r, if c { Decision::Commit } else { Decision::Abort })))
            .collect();
        let commits = replies.iter().filter(|r| r.body.vote == Decision::Commit).count();
        let aborts = replies.len() - commits;
        let got = classify_votes(p, m.id(), 0, &replies, None).unwrap();
        match (oracle_class(f as usize, commits, aborts), got) {
            (None, Classification::NeedMore) => {}
            (Some((d, k)), Classification::Bundle(b)) => {
                prop_assert_eq!((b.decision, b.kind), (d, k));
                prop_assert!(b.votes.iter().all(|v| v.body.vote == d));
                prop_assert_eq!(b.votes.len(), if d == Decision::Commit { commits } else { aborts });
                let mut ctx = VerifyCtx::new(ring.clone());
                prop_assert!(basil::cert::verify_bundle(&b, &m, p, &mut ctx));
            }
            (want, got) => prop_assert!(false, "want {:?}, got {:?}", want, got),
        }
    }

    #[test]
    fn logging_shard_is_id_mod_len(writes in prop::collection::btree_set(0u64..40, 1..6), s in 1u32..6) {
        let m = meta_on(&writes.iter().copied().collect::<Vec<_>>());
        let shards = m.shards(s);
        let id = m.id();
        // 256 = 1 mod 3 and mod 5, and the last byte fixes the value mod 2 and 4.
        let want = match shards.len() {
            1 => 0,
            2 | 4 => id.0[31] as usize % shards.len(),
            3 | 5 => id.0.iter().map(|b| *b as usize).sum::<usize>() % shards.len(),
            _ => unreachable!(),
        };
        prop_assert_eq!(logging_shard(&m, &shards).unwrap(), shards[want]);
        prop_assert_eq!(leader_index(7, &id, 5), ((7 + id.0.iter().map(|b| *b as u64).sum::<u64>()) % 5) as u32);
    }
}

#[test]
fn classify_rejects_duplicates_and_foreign_replies() {
    let p = Params::new(1, 2);
    let ring = ring(p);
    let m = meta_on(&[0, 1]);
    let a = vote(&ring, m.id(), NodeId::replica(0, 0), Decision::Commit);
    assert!(classify_votes(p, m.id(), 0, &[a.clone(), a.clone()], None).is_err());
    let other = vote(&ring, m.id(), NodeId::replica(1, 0), Decision::Commit);
    assert!(classify_votes(p, m.id(), 0, &[a.clone(), other], None).is_err());
    let wrong_txn = vote(&ring, Digest([1; 32]), NodeId::replica(0, 1), Decision::Commit);
    assert!(classify_votes(p, m.id(), 0, &[a, wrong_txn], None).is_err());
}

#[test]
fn slow_cert_needs_distinct_matching_replies_from_logging_shard() {
    let p = Params::new(1, 2);
    let ring = ring(p);
    let m = meta_on(&[0, 1]);
    let id = m.id();
    let log = logging_shard(&m, &m.shards(2)).unwrap();
    let other = 1 - log;
    let replies = |shard, idx: &[u32], view| -> Vec<_> {
        idx.iter().map(|i| p2r(&ring, id, NodeId::replica(shard, *i), Decision::Commit, view)).collect()
    };
    let cert = |shard, replies| DecisionCert {
        txn_id: id,
        decision: Decision::Commit,
        evidence: CertEvidence::Slow { shard, replies },
    };
    let mut ctx = VerifyCtx::new(ring.clone());
    assert!(verify_cert(&cert(log, replies(log, &[0, 1, 2, 3, 4], 0)), &m, p, &mut ctx));
    // Duplicated voter padding a short quorum.
    assert!(!verify_cert(&cert(log, replies(log, &[0, 1, 2, 3, 3], 0)), &m, p, &mut ctx));
    assert!(!verify_cert(&cert(log, replies(log, &[0, 1, 2, 3], 0)), &m, p, &mut ctx));
    assert!(!verify_cert(&cert(other, replies(other, &[0, 1, 2, 3, 4], 0)), &m, p, &mut ctx));
    let mut mixed = replies(log, &[0, 1, 2, 3], 0);
    mixed.extend(replies(log, &[4], 1));
    assert!(!verify_cert(&cert(log, mixed), &m, p, &mut ctx));
    let mut flipped = cert(log, replies(log, &[0, 1, 2, 3, 4], 0));
    flipped.decision = Decision::Abort;
    assert!(!verify_cert(&flipped, &m, p, &mut ctx));
}

#[test]
fn fast_commit_cert_needs_every_shard() {
    let p = Params::new(1, 2);
    let ring = ring(p);
    let m = meta_on(&[0, 1]);
    let bundle = |s| VoteBundle {
        txn_id: m.id(),
        shard: s,
        decision: Decision::Commit,
        kind: BundleKind::FastCert,
        votes: p.replicas(s).map(|r| vote(&ring, m.id(), r, Decision::Commit)).collect(),
        conflict: None,
    };
    let cert = |bundles| DecisionCert { txn_id: m.id(), decision: Decision::Commit, evidence: CertEvidence::Fast { bundles } };
    let mut ctx = VerifyCtx::new(ring.clone());
    assert!(verify_cert(&cert(vec![bundle(1), bundle(0)]), &m, p, &mut ctx));
    assert!(!verify_cert(&cert(vec![bundle(0)]), &m, p, &mut ctx));
    assert!(!verify_cert(&cert(vec![bundle(0), bundle(0)]), &m, p, &mut ctx));
    let mut short = bundle(1);
    short.votes.pop();
    assert!(!verify_cert(&cert(vec![bundle(0), short]), &m, p, &mut ctx));
}

#[test]
fn conflicts_by_timestamp_position() {
    let t = |time, reads: &[(u64, u64)], writes: &[u64]| {
        TxnMeta::new(
            Timestamp::new(time, 1),
            reads.iter().map(|(k, v)| (*k, Timestamp::new(*v, 1))),
            writes.iter().map(|k| (*k, vec![])),
            [],
        )
    };
    let w5 = t(5, &[], &[1]);
    // Read of key 1 at version 2 skips over the committed write at 5.
    assert_eq!(conflict_keys(&t(9, &[(1, 2)], &[]), &w5), vec![1]);
    assert!(conflict_keys(&t(9, &[(1, 5)], &[]), &w5).is_empty());
    assert!(conflict_keys(&t(4, &[(1, 2)], &[]), &w5).is_empty());
    // A write slipping under a committed read.
    let r9 = t(9, &[(2, 3)], &[]);
    assert_eq!(conflict_keys(&t(6, &[], &[2]), &r9), vec![2]);
    assert!(conflict_keys(&t(2, &[], &[2]), &r9).is_empty());
    assert!(conflict_keys(&t(10, &[], &[2]), &r9).is_empty());
}

#[test]
fn majority_and_placement() {
    use Decision::*;
    assert_eq!(majority([Commit, Commit, Abort]), Commit);
    assert_eq!(majority([Commit, Abort]), Abort);
    assert_eq!(majority([Abort, Abort, Commit, Commit, Commit]), Commit);
    assert_eq!((0..6).map(|k| shard_of(k, 3)).collect::<Vec<_>>(), vec![0, 1, 2, 0, 1, 2]);
}
