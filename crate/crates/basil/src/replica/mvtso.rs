//! The concurrency control check run once per transaction.

use std::collections::BTreeSet;
use std::sync::Arc;

use crate::cert::CertifiedTxn;
use crate::crypto::Digest;
use crate::types::{Decision, TxnMeta};

use super::Replica;

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum CheckOutcome {
    Vote(Decision, Option<Arc<CertifiedTxn>>),
    /// The transaction claims to have read a version from its own future.
    Misbehavior(String),
    /// Prepared; the vote waits for these dependencies to be decided.
    Wait(BTreeSet<Digest>),
    /// Abort: conflicts with this prepared transaction, not yet decided here.
    Blocked(Digest),
}

impl Replica {
    /// Run the check for `meta`. On success the transaction is prepared
    /// (its writes become visible) before the dependency wait.
    pub fn mvtso_check(&mut self, meta: &TxnMeta, clock: u64) -> CheckOutcome {
        let abort = CheckOutcome::Vote(Decision::Abort, None);
        let ts = meta.ts;
        if ts.time == 0 || ts.time > clock.saturating_add(self.cfg.delta) {
            return abort;
        }

        // Timestamps identify versions, so a second transaction reusing one is rejected.
        let id = meta.id();
        let clash = |x: Option<&Digest>| x.is_some_and(|other| *other != id);
        for (k, _) in meta.write_set.iter().filter(|(k, _)| self.mine(*k)) {
            if let Some(s) = self.store.key(*k) {
                if clash(s.prepared.get(&ts)) || clash(s.committed.get(&ts)) {
                    return abort;
                }
            }
        }
        for (k, _) in meta.read_set.iter().filter(|(k, _)| self.mine(*k)) {
            if self.store.key(*k).is_some_and(|s| clash(s.readers.get(&ts).map(|(_, i)| i))) {
                return abort;
            }
        }

        let mut pending = BTreeSet::new();
        for (ver, dep) in &meta.dep_set {
            let backed: Vec<_> = meta
                .read_set
                .iter()
                .filter(|(k, v)| v == ver && self.mine(*k))
                .map(|(k, _)| *k)
                .collect();
            if backed.is_empty() {
                continue;
            }
            let Some(d) = self.txns.get(dep) else { return abort };
            let Some(dmeta) = &d.meta else { return abort };
            if dmeta.ts != *ver || !backed.iter().any(|k| dmeta.writes(*k)) {
                return abort;
            }
            match d.finalized.as_ref().map(|c| c.cert.decision) {
                Some(Decision::Commit) => {}
                Some(Decision::Abort) => return abort,
                None if d.prepared => {
                    pending.insert(*dep);
                }
                None => return abort,
            }
        }

        for (k, rv) in meta.read_set.iter().filter(|(k, _)| self.mine(*k)) {
            if *rv > ts {
                return CheckOutcome::Misbehavior(format!("read of key {k} at {rv:?} above own {ts:?}"));
            }
            if let Some((writer, committed)) = self.store.writer_between(*k, *rv, ts) {
                return match committed {
                    true => CheckOutcome::Vote(Decision::Abort, self.committed_cert(&writer)),
                    false => CheckOutcome::Blocked(writer),
                };
            }
        }

        for (k, _) in meta.write_set.iter().filter(|(k, _)| self.mine(*k)) {
            if let Some(reader) = self.store.reader_spanning(*k, ts) {
                return match self.committed_cert(&reader) {
                    Some(c) => CheckOutcome::Vote(Decision::Abort, Some(c)),
                    None if self.txns.get(&reader).is_some_and(|e| e.finalized.is_none()) => {
                        CheckOutcome::Blocked(reader)
                    }
                    None => abort,
                };
            }
            if self.store.max_rts(*k).is_some_and(|r| r > ts) {
                return abort;
            }
        }

        self.prepare(meta);
        if pending.is_empty() {
            CheckOutcome::Vote(Decision::Commit, None)
        } else {
            CheckOutcome::Wait(pending)
        }
    }

    fn committed_cert(&self, id: &Digest) -> Option<Arc<CertifiedTxn>> {
        self.txns
            .get(id)?
            .finalized
            .clone()
            .filter(|c| c.cert.decision == Decision::Commit)
    }

    fn prepare(&mut self, meta: &TxnMeta) {
        let id = meta.id();
        for (k, _) in &meta.write_set {
            if self.mine(*k) {
                self.store.key_mut(*k).prepared.insert(meta.ts, id);
            }
        }
        for (k, rv) in &meta.read_set {
            if self.mine(*k) {
                self.store.key_mut(*k).readers.insert(meta.ts, (*rv, id));
            }
        }
        if let Some(e) = self.txns.get_mut(&id) {
            e.prepared = true;
        }
    }

    pub(super) fn unprepare(&mut self, meta: &TxnMeta) {
        for (k, _) in &meta.write_set {
            if self.mine(*k) {
                let s = self.store.key_mut(*k);
                if s.prepared.get(&meta.ts) == Some(&meta.id()) {
                    s.prepared.remove(&meta.ts);
                }
            }
        }
        for (k, _) in &meta.read_set {
            if self.mine(*k) {
                let s = self.store.key_mut(*k);
                if s.readers.get(&meta.ts).is_some_and(|(_, id)| *id == meta.id()) {
                    s.readers.remove(&meta.ts);
                }
            }
        }
        if let Some(e) = self.txns.get_mut(&meta.id()) {
            e.prepared = false;
        }
    }
}
