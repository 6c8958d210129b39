use std::sync::Arc;

use basil::cert::{BundleKind, CertEvidence, CertifiedTxn, DecisionCert, VoteBundle};
use basil::crypto::{Digest, Keyring, SignatureScheme};
use basil::history::Event;
use basil::messages::{Message, P1Reply, P1rBody, Signed};
use basil::node::Ctx;
use basil::replica::fallback::{next_view, view_rules};
use basil::replica::{Replica, ReplicaConfig};
use basil::types::{Decision, Key, NodeId, Params, Timestamp, TxnMeta, View};
use proptest::prelude::*;

const P: Params = Params::new(1, 1);

struct Fixture {
    ring: Arc<Keyring>,
    r: Replica,
}

impl Fixture {
    fn new() -> Self {
        let ring = Arc::new(Keyring::new(SignatureScheme::Mock, 4, P.all_replicas()));
        let r = Replica::new(NodeId::replica(0, 0), ReplicaConfig::new(P), ring.clone());
        Fixture { ring, r }
    }

    /// Send P1 and return the reply, if the vote was cast.
    fn p1(&mut self, m: &Arc<TxnMeta>) -> Option<P1Reply> {
        let mut ctx = Ctx::new(100, 100);
        self.r.handle(NodeId::Client(m.ts.client), Message::P1 { meta: m.clone() }, &mut ctx);
        ctx.sends.into_iter().find_map(|(_, msg)| match msg {
            Message::P1Reply(r) => Some(r),
            _ => None,
        })
    }

    fn read(&mut self, k: Key, ts: Timestamp) {
        let mut ctx = Ctx::new(100, 100);
        self.r.handle(NodeId::Client(ts.client), Message::ReadRequest { key: k, ts }, &mut ctx);
    }

    /// Apply a fast certificate for `m` and return the votes it released.
    fn decide(&mut self, m: &Arc<TxnMeta>, d: Decision) -> Vec<(Digest, Decision)> {
        let votes = P
            .replicas(0)
            .map(|r| Signed::sign(P1rBody { txn_id: m.id(), replica: r, vote: d }, &self.ring.signer(r).unwrap()))
            .collect();
        let bundle =
            VoteBundle { txn_id: m.id(), shard: 0, decision: d, kind: BundleKind::FastCert, votes, conflict: None };
        let cert = DecisionCert { txn_id: m.id(), decision: d, evidence: CertEvidence::Fast { bundles: vec![bundle] } };
        let mut ctx = Ctx::new(100, 100);
        self.r.finalize(Arc::new(CertifiedTxn { meta: m.clone(), cert }), &mut ctx);
        ctx.events
            .into_iter()
            .filter_map(|e| match e {
                Event::VoteCast { txn_id, vote, .. } => Some((txn_id, vote)),
                _ => None,
            })
            .collect()
    }
}

fn txn(time: u64, client: u64, reads: &[(Key, u64)], writes: &[Key], deps: &[&Arc<TxnMeta>]) -> Arc<TxnMeta> {
    Arc::new(TxnMeta::new(
        Timestamp::new(time, client),
        reads.iter().map(|(k, t)| (*k, if *t == 0 { Timestamp::GENESIS } else { Timestamp::new(*t, 1) })),
        writes.iter().map(|k| (*k, vec![time as u8])),
        deps.iter().map(|d| (d.ts, d.id())),
    ))
}

#[test]
fn read_skipping_prepared_write_aborts_with_blocker() {
    let mut fx = Fixture::new();
    let w = txn(20, 1, &[], &[1], &[]);
    assert_eq!(fx.p1(&w).unwrap().p1r.body.vote, Decision::Commit);
    let stale = txn(30, 2, &[(1, 0)], &[], &[]);
    let reply = fx.p1(&stale).unwrap();
    assert_eq!(reply.p1r.body.vote, Decision::Abort);
    assert!(reply.conflict.is_none());
    assert_eq!(reply.blocker.map(|b| b.id()), Some(w.id()));
}

#[test]
fn read_skipping_committed_write_aborts_with_certificate() {
    let mut fx = Fixture::new();
    let w = txn(20, 1, &[], &[1], &[]);
    fx.p1(&w);
    fx.decide(&w, Decision::Commit);
    let reply = fx.p1(&txn(30, 2, &[(1, 0)], &[], &[])).unwrap();
    assert_eq!(reply.p1r.body.vote, Decision::Abort);
    assert_eq!(reply.conflict.map(|c| c.id()), Some(w.id()));
    assert!(reply.blocker.is_none());
}

#[test]
fn write_under_prepared_read_aborts_with_blocker() {
    let mut fx = Fixture::new();
    let reader = txn(30, 2, &[(1, 0)], &[], &[]);
    assert_eq!(fx.p1(&reader).unwrap().p1r.body.vote, Decision::Commit);
    let reply = fx.p1(&txn(20, 1, &[], &[1], &[])).unwrap();
    assert_eq!(reply.p1r.body.vote, Decision::Abort);
    assert_eq!(reply.blocker.map(|b| b.id()), Some(reader.id()));
    // Once the reader aborts the hint is gone, but the vote stays.
    fx.decide(&reader, Decision::Abort);
    let again = fx.p1(&txn(20, 1, &[], &[1], &[])).unwrap();
    assert_eq!(again.p1r.body.vote, Decision::Abort);
    assert!(again.blocker.is_none());
}

#[test]
fn write_under_served_read_aborts() {
    let mut fx = Fixture::new();
    fx.read(1, Timestamp::new(30, 2));
    let reply = fx.p1(&txn(20, 1, &[], &[1], &[])).unwrap();
    assert_eq!(reply.p1r.body.vote, Decision::Abort);
    assert!(reply.blocker.is_none());
    assert_eq!(fx.p1(&txn(40, 1, &[], &[1], &[])).unwrap().p1r.body.vote, Decision::Commit);
}

#[test]
fn timestamps_out_of_bounds_or_reused_abort() {
    let mut fx = Fixture::new();
    // Clock 100 plus the default bound of 50.
    assert_eq!(fx.p1(&txn(151, 1, &[], &[1], &[])).unwrap().p1r.body.vote, Decision::Abort);
    assert_eq!(fx.p1(&txn(150, 1, &[], &[2], &[])).unwrap().p1r.body.vote, Decision::Commit);
    // Same timestamp, different transaction writing the same key.
    let twin = Arc::new(TxnMeta::new(Timestamp::new(150, 1), [], [(2, b"other".to_vec())], []));
    assert_eq!(fx.p1(&twin).unwrap().p1r.body.vote, Decision::Abort);
}

#[test]
fn dependency_vote_waits_for_decision() {
    for (outcome, want) in [(Decision::Commit, Decision::Commit), (Decision::Abort, Decision::Abort)] {
        let mut fx = Fixture::new();
        let w = txn(20, 1, &[], &[1], &[]);
        fx.p1(&w);
        let r = txn(30, 2, &[(1, 20)], &[3], &[&w]);
        assert!(fx.p1(&r).is_none(), "vote must wait for the dependency");
        assert!(fx.r.txn(&r.id()).unwrap().prepared);
        assert_eq!(fx.decide(&w, outcome), vec![(r.id(), want)]);
    }
}

#[test]
fn unknown_dependency_aborts() {
    let mut fx = Fixture::new();
    let ghost = txn(20, 1, &[], &[1], &[]);
    let r = txn(30, 2, &[(1, 20)], &[], &[&ghost]);
    assert_eq!(fx.p1(&r).unwrap().p1r.body.vote, Decision::Abort);
}

#[test]
fn vote_is_fixed_once_cast() {
    let mut fx = Fixture::new();
    let t = txn(20, 1, &[(5, 0)], &[5], &[]);
    let first = fx.p1(&t).unwrap().p1r.body;
    // A conflicting arrival afterwards does not change the recorded vote.
    fx.p1(&txn(25, 2, &[(5, 0)], &[5], &[]));
    assert_eq!(fx.p1(&t).unwrap().p1r.body, first);
}

// Support-counting oracle: the largest view reported by at least `k` replicas
// (counting a report of v as support for every lower view).
fn supported(reports: &[View], k: usize) -> Option<View> {
    let top = reports.iter().copied().max()?;
    (0..=top).rev().find(|v| reports.iter().filter(|r| *r >= v).count() >= k)
}

proptest! {
    #[test]
    fn view_rules_match_counting_oracle(current in 0u64..6, reports in prop::collection::vec(0u64..8, 0..7)) {
        let u = view_rules(current, &reports, P);
        prop_assert_eq!(u.r1, supported(&reports, 4).map(|v| v + 1));
        prop_assert_eq!(u.r2, supported(&reports, 2).filter(|v| *v > current));
    }

    #[test]
    fn next_view_never_regresses(current in 0u64..6, reports in prop::collection::vec(0u64..8, 0..7), gate in any::<bool>()) {
        let v = next_view(current, &reports, P, true, gate);
        prop_assert!(v >= current);
        // Never beyond what R1 or R2 can justify.
        let bound = supported(&reports, 4).map(|v| v + 1).into_iter().chain(supported(&reports, 2)).max();
        prop_assert!(v == current || Some(v) <= bound || (current == 0 && reports.is_empty() && v == 1));
    }
}
