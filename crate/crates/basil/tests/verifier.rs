use std::sync::Arc;

use basil::cert::{BundleKind, CertEvidence, CertifiedTxn, DecisionCert, VoteBundle};
use basil::crypto::Keyring;
use basil::history::{Event, HistoryLog};
use basil::messages::{P1rBody, Signed};
use basil::sim::{Sim, SimConfig};
use basil::types::{Decision, Key, Timestamp, TxnMeta};
use basil::verifier::{serial_order_exists, verify, Dsg, Status};
use proptest::prelude::*;

fn small_run() -> (SimConfig, HistoryLog) {
    let cfg = SimConfig { seed: 1, clients: 2, duration: 300, ..SimConfig::default() };
    (cfg.clone(), Sim::new(cfg).unwrap().run().log)
}

/// A certificate signed by the run's own replica keys: what a forger holding
/// every key could produce.
fn forged(cfg: &SimConfig, meta: &Arc<TxnMeta>, d: Decision) -> Event {
    let p = cfg.params();
    let ring = Keyring::new(cfg.signature, cfg.seed, p.all_replicas());
    let votes = p
        .replicas(0)
        .map(|r| Signed::sign(P1rBody { txn_id: meta.id(), replica: r, vote: d }, &ring.signer(r).unwrap()))
        .collect();
    let bundle = VoteBundle { txn_id: meta.id(), shard: 0, decision: d, kind: BundleKind::FastCert, votes, conflict: None };
    let cert = DecisionCert { txn_id: meta.id(), decision: d, evidence: CertEvidence::Fast { bundles: vec![bundle] } };
    Event::Certificate { txn: Arc::new(CertifiedTxn { meta: meta.clone(), cert }) }
}

fn meta(time: u64, reads: &[Key], writes: &[Key]) -> Arc<TxnMeta> {
    Arc::new(TxnMeta::new(
        Timestamp::new(time, 0),
        reads.iter().map(|k| (*k, Timestamp::GENESIS)),
        writes.iter().map(|k| (*k, vec![1])),
        [],
    ))
}

#[test]
fn clean_run_passes_every_check() {
    let (_, log) = small_run();
    let v = verify(&log);
    assert!(v.ok() && v.safe(), "{:?}", v.failures().collect::<Vec<_>>());
}

#[test]
fn dual_certificates_are_caught() {
    let (cfg, mut log) = small_run();
    let t = meta(900_000, &[], &[7_000]);
    log.push(1, forged(&cfg, &t, Decision::Commit));
    log.push(2, forged(&cfg, &t, Decision::Abort));
    let v = verify(&log);
    assert_eq!(v.get("cert_uniqueness").unwrap().status, Status::Fail);
    assert!(v.get("cert_uniqueness").unwrap().counterexample.is_some());
    assert!(!v.safe());
}

#[test]
fn write_skew_is_caught() {
    let (cfg, mut log) = small_run();
    // Each reads the initial version of the key the other overwrites.
    let a = meta(900_000, &[7_000], &[7_001]);
    let b = meta(900_001, &[7_001], &[7_000]);
    log.push(1, forged(&cfg, &a, Decision::Commit));
    log.push(2, forged(&cfg, &b, Decision::Commit));
    let v = verify(&log);
    let s = v.get("byz_serializability").unwrap();
    assert_eq!(s.status, Status::Fail);
    assert!(s.counterexample.is_some());
    assert_eq!(v.get("timestamp_edge_order").unwrap().status, Status::Fail);
}

#[test]
fn unsigned_certificates_do_not_count() {
    let (cfg, mut log) = small_run();
    let t = meta(900_000, &[], &[7_000]);
    let Event::Certificate { txn } = forged(&cfg, &t, Decision::Abort) else { unreachable!() };
    let mut bad = (*txn).clone();
    bad.cert.decision = Decision::Commit;
    log.push(1, forged(&cfg, &t, Decision::Abort));
    log.push(2, Event::Certificate { txn: Arc::new(bad) });
    assert!(verify(&log).safe());
}

#[test]
fn headerless_log_is_incomplete() {
    let (_, mut log) = small_run();
    log.header = None;
    let v = verify(&log);
    assert!(v.checks.iter().all(|c| c.status == Status::Incomplete));
    assert!(v.ok() && !v.safe());
}

fn history() -> impl Strategy<Value = Vec<TxnMeta>> {
    (1usize..=5).prop_flat_map(|n| {
        let txn = (prop::collection::btree_set(0u64..3, 0..3), prop::collection::btree_map(0u64..3, 0u64..=5, 0..3));
        (Just(n).prop_shuffle_times(), prop::collection::vec(txn, n))
    })
    .prop_map(|(times, specs)| {
        specs
            .into_iter()
            .zip(times)
            .map(|((writes, reads), t)| {
                let read = |v: u64| if v == 0 { Timestamp::GENESIS } else { Timestamp::new(v, 0) };
                TxnMeta::new(
                    Timestamp::new(t, 0),
                    reads.into_iter().map(|(k, v)| (k, read(v))),
                    writes.into_iter().map(|k| (k, vec![])),
                    [],
                )
            })
            .collect()
    })
}

trait ShuffleTimes {
    fn prop_shuffle_times(self) -> BoxedStrategy<Vec<u64>>;
}

impl ShuffleTimes for Just<usize> {
    fn prop_shuffle_times(self) -> BoxedStrategy<Vec<u64>> {
        Just((1..=self.0 as u64).collect::<Vec<_>>()).prop_shuffle().boxed()
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(2000))]
    #[test]
    fn dsg_agrees_with_brute_force(txns in history()) {
        let dsg = Dsg::build(txns.iter().cloned().map(Arc::new).collect());
        prop_assert_eq!(dsg.serializable(), serial_order_exists(&txns));
    }
}
