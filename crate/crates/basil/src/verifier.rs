//! Post-hoc checks over a [`HistoryLog`].
//!
//! Serializability is checked on the direct serialization graph of the
//! committed transactions, with each key's versions ordered by timestamp.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::sync::Arc;

use petgraph::algo::tarjan_scc;
use petgraph::graph::{DiGraph, NodeIndex};
use serde::{Deserialize, Serialize};

use crate::cert::{CertEvidence, CertifiedTxn};
use crate::crypto::{Digest, Keyring, VerifyCtx};
use crate::history::{Event, HistoryLog, Roster};
use crate::sim::SimConfig;
use crate::types::{Decision, Key, NodeId, Params, Timestamp, TxnMeta, View};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Pass,
    Fail,
    /// The log cannot support a verdict (missing records, run too short).
    Incomplete,
    /// The check's precondition does not apply to this run.
    Skipped,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckResult {
    pub name: String,
    pub status: Status,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub details: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub counterexample: Option<serde_json::Value>,
}

/// Cap on details kept per check.
const MAX_DETAILS: usize = 20;

impl CheckResult {
    fn new(name: &str, status: Status) -> Self {
        CheckResult { name: name.into(), status, details: Vec::new(), counterexample: None }
    }

    fn from_problems(name: &str, problems: Vec<String>) -> Self {
        let status = if problems.is_empty() { Status::Pass } else { Status::Fail };
        let mut r = CheckResult::new(name, status);
        r.details = problems.into_iter().take(MAX_DETAILS).collect();
        r
    }

    fn incomplete(name: &str, why: impl Into<String>) -> Self {
        let mut r = CheckResult::new(name, Status::Incomplete);
        r.details.push(why.into());
        r
    }

    pub fn passed(&self) -> bool {
        self.status == Status::Pass
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub checks: Vec<CheckResult>,
}

/// The checks whose failure is a safety violation.
pub const SAFETY_CHECKS: [&str; 3] = ["byz_serializability", "cert_uniqueness", "timestamp_edge_order"];

impl Verdict {
    pub fn get(&self, name: &str) -> Option<&CheckResult> {
        self.checks.iter().find(|c| c.name == name)
    }

    /// No check failed (incomplete and skipped checks are tolerated).
    pub fn ok(&self) -> bool {
        self.checks.iter().all(|c| c.status != Status::Fail)
    }

    /// The three safety checks all passed.
    pub fn safe(&self) -> bool {
        SAFETY_CHECKS.iter().all(|n| self.get(n).is_some_and(CheckResult::passed))
    }

    pub fn failures(&self) -> impl Iterator<Item = &CheckResult> {
        self.checks.iter().filter(|c| c.status == Status::Fail)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EdgeKind {
    Ww,
    Wr,
    Rw,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Edge {
    pub from: Digest,
    pub to: Digest,
    pub kind: EdgeKind,
    pub key: Key,
}

/// Direct serialization graph over committed transactions.
#[derive(Clone, Debug, Default)]
pub struct Dsg {
    pub txns: Vec<Arc<TxnMeta>>,
    pub edges: Vec<(usize, usize, EdgeKind, Key)>,
    /// Reads whose version no committed transaction wrote: `(reader, key, version)`.
    pub dangling: Vec<(usize, Key, Timestamp)>,
    /// Keys written by two committed transactions with the same timestamp.
    pub collisions: Vec<(Key, Timestamp)>,
}

impl Dsg {
    /// Build the graph; versions of a key are ordered by writer timestamp,
    /// with the implicit initial version first.
    pub fn build(txns: Vec<Arc<TxnMeta>>) -> Self {
        let mut dsg = Dsg { txns, ..Dsg::default() };
        let mut writers: BTreeMap<Key, BTreeMap<Timestamp, usize>> = BTreeMap::new();
        for (i, t) in dsg.txns.iter().enumerate() {
            for (k, _) in &t.write_set {
                if writers.entry(*k).or_default().insert(t.ts, i).is_some() {
                    dsg.collisions.push((*k, t.ts));
                }
            }
        }
        for (k, vs) in &writers {
            let order: Vec<usize> = vs.values().copied().collect();
            for w in order.windows(2) {
                dsg.edges.push((w[0], w[1], EdgeKind::Ww, *k));
            }
        }
        for (i, t) in dsg.txns.iter().enumerate() {
            for &(k, rv) in &t.read_set {
                let vs = writers.get(&k);
                if rv != Timestamp::GENESIS {
                    match vs.and_then(|vs| vs.get(&rv)) {
                        Some(&w) if w != i => dsg.edges.push((w, i, EdgeKind::Wr, k)),
                        // Reading the version it writes itself: no serial history produces that.
                        _ => dsg.dangling.push((i, k, rv)),
                    }
                }
                let next = vs.and_then(|vs| vs.range((std::ops::Bound::Excluded(rv), std::ops::Bound::Unbounded)).map(|(_, &j)| j).find(|&j| j != i));
                if let Some(j) = next {
                    dsg.edges.push((i, j, EdgeKind::Rw, k));
                }
            }
        }
        dsg.edges.sort_unstable();
        dsg.edges.dedup();
        dsg
    }

    /// One cycle per non-trivial strongly connected component.
    pub fn cycles(&self) -> Vec<Vec<Edge>> {
        let mut g: DiGraph<usize, (EdgeKind, Key)> = DiGraph::new();
        let nodes: Vec<NodeIndex> = (0..self.txns.len()).map(|i| g.add_node(i)).collect();
        for &(a, b, kind, key) in &self.edges {
            g.add_edge(nodes[a], nodes[b], (kind, key));
        }
        let mut out = Vec::new();
        for scc in tarjan_scc(&g) {
            let self_loop = scc.len() == 1 && g.contains_edge(scc[0], scc[0]);
            if scc.len() < 2 && !self_loop {
                continue;
            }
            let members: BTreeSet<usize> = scc.iter().map(|n| g[*n]).collect();
            out.push(self.cycle_through(*members.first().expect("non-empty"), &members));
        }
        out
    }

    fn cycle_through(&self, start: usize, members: &BTreeSet<usize>) -> Vec<Edge> {
        // Breadth-first search inside the component back to `start`.
        let mut prev: BTreeMap<usize, (usize, EdgeKind, Key)> = BTreeMap::new();
        let mut queue = VecDeque::from([start]);
        let mut seen = BTreeSet::from([start]);
        'search: while let Some(u) = queue.pop_front() {
            for &(a, b, kind, key) in self.edges.iter().filter(|e| e.0 == u && members.contains(&e.1)) {
                if b == start {
                    prev.insert(usize::MAX, (a, kind, key));
                    break 'search;
                }
                if seen.insert(b) {
                    prev.insert(b, (a, kind, key));
                    queue.push_back(b);
                }
            }
        }
        let mut path = Vec::new();
        let mut at = usize::MAX;
        while let Some(&(a, kind, key)) = prev.get(&at) {
            let to = if at == usize::MAX { start } else { at };
            path.push(Edge { from: self.txns[a].id(), to: self.txns[to].id(), kind, key });
            if a == start {
                break;
            }
            at = a;
        }
        path.reverse();
        path
    }

    pub fn edge_view(&self, e: &(usize, usize, EdgeKind, Key)) -> Edge {
        Edge { from: self.txns[e.0].id(), to: self.txns[e.1].id(), kind: e.2, key: e.3 }
    }

    /// Acyclic and every read names an existing version.
    pub fn serializable(&self) -> bool {
        self.dangling.is_empty() && self.collisions.is_empty() && self.cycles().is_empty()
    }
}

/// Exhaustive oracle: is there a serial order of `txns` in which every read
/// returns the latest preceding write of its key and each key's writes appear
/// in timestamp order? Exponential; meant for a handful of transactions.
pub fn serial_order_exists(txns: &[TxnMeta]) -> bool {
    fn extend(txns: &[TxnMeta], used: &mut Vec<bool>, last: &mut BTreeMap<Key, Timestamp>) -> bool {
        if used.iter().all(|u| *u) {
            return true;
        }
        for i in 0..txns.len() {
            if used[i] {
                continue;
            }
            let t = &txns[i];
            let reads_ok = t.read_set.iter().all(|(k, v)| last.get(k).copied().unwrap_or(Timestamp::GENESIS) == *v);
            let order_ok = t.write_set.iter().all(|(k, _)| last.get(k).is_none_or(|prev| *prev < t.ts));
            if !reads_ok || !order_ok {
                continue;
            }
            let saved: Vec<(Key, Option<Timestamp>)> = t.write_set.iter().map(|(k, _)| (*k, last.get(k).copied())).collect();
            for (k, _) in &t.write_set {
                last.insert(*k, t.ts);
            }
            used[i] = true;
            if extend(txns, used, last) {
                return true;
            }
            used[i] = false;
            for (k, v) in saved {
                match v {
                    Some(v) => last.insert(k, v),
                    None => last.remove(&k),
                };
            }
        }
        false
    }
    extend(txns, &mut vec![false; txns.len()], &mut BTreeMap::new())
}

/// Quiescence needed after `max(gst, duration)` for the liveness check to apply.
pub fn liveness_window(cfg: &SimConfig) -> u64 {
    let delta = cfg.delay.max.max(1);
    100 * delta + cfg.view_timeout_base.saturating_mul(1 << (cfg.f + 2).min(20))
}

/// Everything the checks need, extracted once from the log.
struct Facts<'a> {
    log: &'a HistoryLog,
    cfg: SimConfig,
    params: Params,
    roster: Roster,
    /// Verifying certificates by transaction and decision.
    certs: BTreeMap<Digest, BTreeMap<Decision, Arc<CertifiedTxn>>>,
    bogus_certs: Vec<Digest>,
}

impl<'a> Facts<'a> {
    fn new(log: &'a HistoryLog) -> Result<Self, String> {
        let header = log.header.as_ref().ok_or("log has no header")?;
        let cfg: SimConfig =
            serde_json::from_value(header.config.clone()).map_err(|e| format!("header config unreadable: {e}"))?;
        let params = cfg.params();
        let identities = params.all_replicas().chain(header.roster.clients.iter().map(|c| NodeId::Client(*c)));
        let keyring = Arc::new(Keyring::new(cfg.signature, cfg.seed, identities));
        let mut ctx = VerifyCtx::new(keyring);
        let mut certs: BTreeMap<Digest, BTreeMap<Decision, Arc<CertifiedTxn>>> = BTreeMap::new();
        let mut bogus_certs = Vec::new();
        for ev in log.events() {
            if let Event::Certificate { txn } = ev {
                if txn.verify(params, &mut ctx) {
                    certs.entry(txn.id()).or_default().entry(txn.cert.decision).or_insert_with(|| txn.clone());
                } else {
                    bogus_certs.push(txn.id());
                }
            }
        }
        Ok(Facts { log, cfg, params, roster: header.roster.clone(), certs, bogus_certs })
    }

    fn correct(&self, id: NodeId) -> bool {
        !self.roster.is_byz(id)
    }

    fn correct_client(&self, c: u64) -> bool {
        self.correct(NodeId::Client(c))
    }

    fn committed(&self) -> Vec<Arc<TxnMeta>> {
        self.certs
            .values()
            .filter_map(|m| m.get(&Decision::Commit))
            .filter(|c| !c.meta.is_genesis())
            .map(|c| c.meta.clone())
            .collect()
    }

    fn has_cert(&self, id: &Digest, d: Decision) -> bool {
        self.certs.get(id).is_some_and(|m| m.contains_key(&d))
    }
}

/// Run every check.
pub fn verify(log: &HistoryLog) -> Verdict {
    let facts = match Facts::new(log) {
        Ok(f) => f,
        Err(why) => {
            let names = [
                "byz_serializability",
                "cert_uniqueness",
                "timestamp_edge_order",
                "reported_decisions",
                "independence",
                "liveness",
                "vote_immutability",
                "view_monotonicity",
                "runtime_invariants",
            ];
            return Verdict { checks: names.iter().map(|n| CheckResult::incomplete(n, why.clone())).collect() };
        }
    };
    let dsg = Dsg::build(facts.committed());
    Verdict {
        checks: vec![
            check_byz_serializability(&facts, &dsg),
            check_cert_uniqueness(&facts),
            check_timestamp_edge_order(&dsg),
            check_reported_decisions(&facts),
            check_independence(&facts),
            check_liveness(&facts),
            check_vote_immutability(&facts),
            check_view_monotonicity(&facts),
            check_runtime_invariants(&facts),
        ],
    }
}

fn check_byz_serializability(facts: &Facts, dsg: &Dsg) -> CheckResult {
    const NAME: &str = "byz_serializability";
    // Every reported commit must have its certificate in the log.
    for ev in facts.log.events() {
        if let Event::DecisionReported { txn_id, decision, .. } = ev {
            if facts.certs.get(txn_id).is_none_or(|m| m.is_empty()) && !facts.bogus_certs.contains(txn_id) {
                return CheckResult::incomplete(NAME, format!("no certificate recorded for {} ({decision:?})", txn_id.to_hex()));
            }
        }
    }
    let mut problems = Vec::new();
    let mut counter = None;
    if let Some(cycle) = dsg.cycles().into_iter().next() {
        let desc = cycle.iter().map(|e| format!("{} -{:?}[{}]-> {}", e.from.to_hex(), e.kind, e.key, e.to.to_hex())).collect::<Vec<_>>();
        problems.push(format!("cycle: {}", desc.join(", ")));
        counter = serde_json::to_value(&cycle).ok();
    }
    for (k, ts) in &dsg.collisions {
        problems.push(format!("two committed writes of key {k} at {ts}"));
    }
    // Read-result consistency, for reads by correct clients.
    let mut writers: BTreeMap<Key, BTreeSet<Timestamp>> = BTreeMap::new();
    for t in &dsg.txns {
        for (k, _) in &t.write_set {
            writers.entry(*k).or_default().insert(t.ts);
        }
    }
    for t in &dsg.txns {
        if !facts.correct_client(t.ts.client) {
            continue;
        }
        for &(k, rv) in &t.read_set {
            let vs = writers.get(&k);
            let exists = rv == Timestamp::GENESIS || vs.is_some_and(|v| v.contains(&rv));
            if !exists {
                problems.push(format!("{} read key {k} at {rv}, which never committed", t.id().to_hex()));
                continue;
            }
            let newer = vs.and_then(|v| v.range((std::ops::Bound::Excluded(rv), std::ops::Bound::Excluded(t.ts))).next());
            if let Some(w) = newer {
                problems.push(format!("{} read key {k} at {rv} but {w} committed in between", t.id().to_hex()));
            }
        }
    }
    let mut r = CheckResult::from_problems(NAME, problems);
    r.counterexample = counter;
    r
}

fn check_cert_uniqueness(facts: &Facts) -> CheckResult {
    let mut problems = Vec::new();
    let mut counter = None;
    for (id, m) in &facts.certs {
        if let (Some(c), Some(a)) = (m.get(&Decision::Commit), m.get(&Decision::Abort)) {
            problems.push(format!("{} has both a commit and an abort certificate", id.to_hex()));
            counter.get_or_insert_with(|| serde_json::json!({ "txn": id, "commit": c.cert, "abort": a.cert }));
        }
    }
    let mut r = CheckResult::from_problems("cert_uniqueness", problems);
    r.counterexample = counter;
    r
}

fn check_timestamp_edge_order(dsg: &Dsg) -> CheckResult {
    let problems = dsg
        .edges
        .iter()
        .filter(|e| dsg.txns[e.0].ts >= dsg.txns[e.1].ts)
        .map(|e| {
            let v = dsg.edge_view(e);
            format!(
                "{:?} edge on key {} from {} ({}) to {} ({})",
                v.kind,
                v.key,
                v.from.to_hex(),
                dsg.txns[e.0].ts,
                v.to.to_hex(),
                dsg.txns[e.1].ts
            )
        })
        .collect();
    CheckResult::from_problems("timestamp_edge_order", problems)
}

/// Correct clients report only decisions they hold a verifying certificate for.
fn check_reported_decisions(facts: &Facts) -> CheckResult {
    let mut problems = Vec::new();
    for ev in facts.log.events() {
        if let Event::DecisionReported { client, txn_id, decision, .. } = ev {
            if facts.correct_client(*client) && !facts.has_cert(txn_id, *decision) {
                problems.push(format!("C{client} reported {decision:?} for {} without a certificate", txn_id.to_hex()));
            }
        }
    }
    CheckResult::from_problems("reported_decisions", problems)
}

fn check_independence(facts: &Facts) -> CheckResult {
    const NAME: &str = "independence";
    if facts.cfg.gst > 0 {
        let mut r = CheckResult::new(NAME, Status::Skipped);
        r.details.push("requires a synchronous network (gst = 0)".into());
        return r;
    }
    let f = facts.params.f();
    let mut correct_abort_votes: BTreeSet<Digest> = BTreeSet::new();
    let mut conflict_backed: BTreeSet<Digest> = BTreeSet::new();
    for ev in facts.log.events() {
        match ev {
            Event::VoteCast { replica, txn_id, vote: Decision::Abort, .. } if facts.correct(*replica) => {
                correct_abort_votes.insert(*txn_id);
            }
            Event::Logged { replica, txn_id, decision: Decision::Abort, backing: Some(b), .. }
                if facts.correct(*replica) && b.conflict =>
            {
                conflict_backed.insert(*txn_id);
            }
            _ => {}
        }
    }
    let fast_conflict = |id: &Digest| {
        facts.certs.get(id).and_then(|m| m.get(&Decision::Abort)).is_some_and(|c| match &c.cert.evidence {
            CertEvidence::Fast { bundles } => bundles.iter().any(|b| b.conflict.is_some()),
            _ => false,
        })
    };
    let mut problems = Vec::new();
    for ev in facts.log.events() {
        match ev {
            Event::DecisionReported { client, txn_id, decision: Decision::Abort, .. } if facts.correct_client(*client) => {
                if !correct_abort_votes.contains(txn_id) && !conflict_backed.contains(txn_id) && !fast_conflict(txn_id) {
                    problems.push(format!("abort of C{client}'s {} has no correct Abort vote behind it", txn_id.to_hex()));
                }
            }
            Event::ReadAdopted { client, key, version, writer, prepared, sources, .. } if facts.correct_client(*client) => {
                let distinct: BTreeSet<&NodeId> = sources.iter().collect();
                if *prepared {
                    if distinct.len() < f + 1 {
                        problems.push(format!("C{client} adopted prepared {version} of key {key} from {} replicas", distinct.len()));
                    }
                    if distinct.iter().all(|r| !facts.correct(**r)) {
                        problems.push(format!("C{client} adopted prepared {version} of key {key} vouched for only by faulty replicas"));
                    }
                } else if *version != Timestamp::GENESIS && !facts.has_cert(writer, Decision::Commit) {
                    problems.push(format!("C{client} adopted committed {version} of key {key} without a commit certificate"));
                }
            }
            _ => {}
        }
    }
    CheckResult::from_problems(NAME, problems)
}

fn check_liveness(facts: &Facts) -> CheckResult {
    const NAME: &str = "liveness";
    let horizon = facts.cfg.duration.saturating_add(facts.cfg.quiesce);
    let settle_from = facts.cfg.gst.max(facts.cfg.duration);
    let window = horizon.saturating_sub(settle_from);
    let need = liveness_window(&facts.cfg);
    if window < need {
        return CheckResult::incomplete(NAME, format!("quiescence after GST is {window} ticks, need {need}"));
    }
    let mut decided: BTreeSet<Digest> = BTreeSet::new();
    for ev in facts.log.events() {
        if let Event::CertAccepted { node, txn_id, .. } = ev {
            if facts.correct(*node) {
                decided.insert(*txn_id);
            }
        }
    }
    let mut stuck = BTreeMap::new();
    for ev in facts.log.events() {
        if let Event::Interested { client, txn_id } = ev {
            if facts.correct_client(*client) && !decided.contains(txn_id) {
                stuck.entry(*txn_id).or_insert(*client);
            }
        }
    }
    let problems = stuck.iter().map(|(t, c)| format!("{} (wanted by C{c}) never finalized", t.to_hex())).collect();
    CheckResult::from_problems(NAME, problems)
}

/// A correct replica never changes its Stage-1 vote.
fn check_vote_immutability(facts: &Facts) -> CheckResult {
    let mut votes: BTreeMap<(NodeId, Digest), Decision> = BTreeMap::new();
    let mut problems = Vec::new();
    for ev in facts.log.events() {
        if let Event::VoteCast { replica, txn_id, vote, .. } = ev {
            if !facts.correct(*replica) {
                continue;
            }
            if let Some(prev) = votes.insert((*replica, *txn_id), *vote) {
                if prev != *vote {
                    problems.push(format!("{replica} changed its vote on {} from {prev:?} to {vote:?}", txn_id.to_hex()));
                }
            }
        }
    }
    CheckResult::from_problems("vote_immutability", problems)
}

/// Correct replicas' per-transaction views only move forward, one record at a time.
fn check_view_monotonicity(facts: &Facts) -> CheckResult {
    let mut views: BTreeMap<(NodeId, Digest), View> = BTreeMap::new();
    let mut problems = Vec::new();
    for ev in facts.log.events() {
        if let Event::ViewChanged { replica, txn_id, from, to } = ev {
            if !facts.correct(*replica) {
                continue;
            }
            let cur = views.entry((*replica, *txn_id)).or_insert(0);
            if *from != *cur || to <= from {
                problems.push(format!("{replica} moved {} from view {from} to {to} while at {cur}", txn_id.to_hex()));
            }
            *cur = (*cur).max(*to);
        }
    }
    CheckResult::from_problems("view_monotonicity", problems)
}

/// Violations flagged during the run (conflicting certificates, view spread).
fn check_runtime_invariants(facts: &Facts) -> CheckResult {
    let problems = facts
        .log
        .events()
        .filter_map(|ev| match ev {
            Event::InvariantViolation { what } => Some(what.clone()),
            _ => None,
        })
        .collect();
    CheckResult::from_problems("runtime_invariants", problems)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ts(t: u64) -> Timestamp {
        Timestamp::new(t, 1)
    }

    fn txn(t: u64, reads: &[(Key, u64)], writes: &[Key]) -> TxnMeta {
        let r = reads.iter().map(|&(k, v)| (k, if v == 0 { Timestamp::GENESIS } else { ts(v) }));
        TxnMeta::new(ts(t), r, writes.iter().map(|k| (*k, vec![t as u8])), [])
    }

    fn dsg(txns: &[TxnMeta]) -> Dsg {
        Dsg::build(txns.iter().cloned().map(Arc::new).collect())
    }

    #[test]
    fn single_txn_is_acyclic() {
        assert!(dsg(&[txn(1, &[(0, 0)], &[0])]).serializable());
    }

    #[test]
    fn wr_then_rw_back_is_a_cycle() {
        // T2 reads T1's x but the initial y, which T1 overwrote.
        let t1 = txn(1, &[], &[0, 1]);
        let t2 = txn(2, &[(0, 1), (1, 0)], &[]);
        let g = dsg(&[t1.clone(), t2.clone()]);
        let cycles = g.cycles();
        assert_eq!(cycles.len(), 1);
        let kinds: BTreeSet<EdgeKind> = cycles[0].iter().map(|e| e.kind).collect();
        assert_eq!(kinds, BTreeSet::from([EdgeKind::Wr, EdgeKind::Rw]));
        assert_eq!(cycles[0].len(), 2);
        assert!(!serial_order_exists(&[t1, t2]));
    }

    #[test]
    fn dangling_read_is_not_serializable() {
        let g = dsg(&[txn(5, &[(0, 3)], &[])]);
        assert_eq!(g.dangling.len(), 1);
        assert!(!g.serializable());
        assert!(!serial_order_exists(&[txn(5, &[(0, 3)], &[])]));
    }

    #[test]
    fn oracle_agrees_on_small_examples() {
        let cases: Vec<Vec<TxnMeta>> = vec![
            vec![txn(1, &[], &[0]), txn(2, &[(0, 1)], &[0])],
            vec![txn(1, &[], &[0]), txn(2, &[(0, 0)], &[0])],
            vec![txn(1, &[(1, 0)], &[0]), txn(2, &[(0, 0)], &[1])],
            vec![txn(1, &[], &[0, 1]), txn(2, &[(0, 1), (1, 0)], &[])],
        ];
        for c in cases {
            assert_eq!(dsg(&c).serializable(), serial_order_exists(&c), "{c:?}");
        }
    }
}
