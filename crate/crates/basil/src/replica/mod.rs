//! The per-shard replica state machine.

pub mod fallback;
pub mod mvtso;
pub mod store;

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::cert::{
    leader_index, logging_shard, majority, validate_p2, verify_cert, AbortBacking, CertifiedTxn,
};
use crate::crypto::{Digest, Keyring, SigningKey, VerifyCtx};
use crate::history::Event;
use crate::merkle::build_batch;
use crate::messages::{
    Auth, DecFbBody, ElectFbBody, Message, P1Reply, P1rBody, P2rBody, ReadReplyBody, RecoveryReply,
    Signed, VersionRef,
};
use crate::node::{Ctx, Timer};
use crate::types::{shard_of, Decision, Key, NodeId, Params, ShardId, Timestamp, TxnMeta, View};

use self::fallback::{next_view, view_timeout};
use self::mvtso::CheckOutcome;
use self::store::VersionedStore;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReplicaConfig {
    pub params: Params,
    /// Bound on how far a timestamp may run ahead of the local clock.
    pub delta: u64,
    /// Accept an empty InvokeFB as proof for moving from view 0 to view 1.
    pub no_proof_view1: bool,
    pub view_timeout_base: u64,
    /// Replies per signed Merkle batch; 1 signs every reply directly.
    pub batch_size: usize,
    /// Longest a partially filled batch waits before being signed.
    pub batch_window: u64,
}

impl ReplicaConfig {
    pub fn new(params: Params) -> Self {
        ReplicaConfig {
            params,
            delta: 50,
            no_proof_view1: true,
            view_timeout_base: 100,
            batch_size: 1,
            batch_window: 2,
        }
    }
}

/// Everything a replica knows about one transaction.
#[derive(Clone, Debug, Default)]
pub struct TxnEntry {
    pub meta: Option<Arc<TxnMeta>>,
    /// The concurrency control check has run (it runs at most once).
    pub checked: bool,
    /// Stage-1 vote; immutable once set.
    pub vote: Option<(Decision, Option<Arc<CertifiedTxn>>)>,
    pub prepared: bool,
    pub pending_deps: BTreeSet<Digest>,
    /// The prepared transaction an Abort vote was cast against.
    pub blocker: Option<Digest>,
    /// Clients waiting for the vote.
    parked: BTreeSet<NodeId>,
    pub logged: Option<(Decision, View)>,
    pub view_current: View,
    view_entered_at: u64,
    pub finalized: Option<Arc<CertifiedTxn>>,
    pub interested: BTreeSet<NodeId>,
    elect_buffer: BTreeMap<View, BTreeMap<NodeId, Signed<ElectFbBody>>>,
    /// DecFB this replica broadcast as leader, per view.
    led: BTreeMap<View, Message>,
    elect_deferred: bool,
}

impl TxnEntry {
    pub fn elects_for(&self, view: View) -> Vec<Signed<ElectFbBody>> {
        self.elect_buffer.get(&view).map(|m| m.values().cloned().collect()).unwrap_or_default()
    }
}

pub struct Replica {
    pub id: NodeId,
    shard: ShardId,
    cfg: ReplicaConfig,
    key: SigningKey,
    verify: VerifyCtx,
    store: VersionedStore,
    txns: BTreeMap<Digest, TxnEntry>,
    /// dependency -> transactions whose vote waits on it
    waiters: BTreeMap<Digest, BTreeSet<Digest>>,
    batch: Vec<(NodeId, Message)>,
    batch_leaves: usize,
    flush_armed: bool,
    genesis: Arc<CertifiedTxn>,
}

impl std::fmt::Debug for Replica {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Replica").field("id", &self.id).field("txns", &self.txns.len()).finish()
    }
}

impl Replica {
    pub fn new(id: NodeId, cfg: ReplicaConfig, keyring: Arc<Keyring>) -> Self {
        let shard = id.shard().expect("replica identity");
        let key = keyring.signer(id).expect("replica registered in keyring");
        let genesis = Arc::new(CertifiedTxn::genesis());
        Replica {
            id,
            shard,
            cfg,
            key,
            verify: VerifyCtx::new(keyring),
            store: VersionedStore::new(genesis.id()),
            txns: BTreeMap::new(),
            waiters: BTreeMap::new(),
            batch: Vec::new(),
            batch_leaves: 0,
            flush_armed: false,
            genesis,
        }
    }

    pub fn config(&self) -> &ReplicaConfig {
        &self.cfg
    }

    pub fn params(&self) -> Params {
        self.cfg.params
    }

    pub fn txn(&self, id: &Digest) -> Option<&TxnEntry> {
        self.txns.get(id)
    }

    pub fn txns(&self) -> impl Iterator<Item = (&Digest, &TxnEntry)> {
        self.txns.iter()
    }

    pub fn store(&self) -> &VersionedStore {
        &self.store
    }

    pub fn signing_key(&self) -> &SigningKey {
        &self.key
    }

    pub fn verify_ctx(&self) -> &VerifyCtx {
        &self.verify
    }

    pub fn view_of(&self, id: &Digest) -> View {
        self.txns.get(id).map_or(0, |e| e.view_current)
    }

    fn mine(&self, k: Key) -> bool {
        shard_of(k, self.cfg.params.num_shards) == self.shard
    }

    fn is_logging_shard(&self, meta: &TxnMeta) -> bool {
        logging_shard(meta, &meta.shards(self.cfg.params.num_shards)).is_ok_and(|s| s == self.shard)
    }

    fn entry(&mut self, meta: &Arc<TxnMeta>) -> &mut TxnEntry {
        let e = self.txns.entry(meta.id()).or_default();
        if e.meta.is_none() {
            e.meta = Some(meta.clone());
        }
        e
    }

    fn misbehavior(&self, ctx: &mut Ctx, suspect: NodeId, what: impl Into<String>) {
        ctx.log(Event::Misbehavior { observer: self.id, suspect, what: what.into() });
    }

    /// Process one inbound message. Outbound messages are left unsigned in
    /// `ctx.sends`; call [`Replica::seal`] afterwards.
    pub fn handle(&mut self, from: NodeId, msg: Message, ctx: &mut Ctx) {
        match msg {
            Message::ReadRequest { key, ts } if from.is_client() => self.on_read(from, key, ts, ctx),
            Message::P1 { meta } if from.is_client() => self.on_p1(from, meta, ctx),
            Message::P2 { meta, decision, tallies, view } if from.is_client() => {
                self.on_p2(from, meta, decision, &tallies, view, ctx)
            }
            Message::Writeback(txn) => self.on_writeback(from, txn, ctx),
            Message::AbortNotice { ts, keys } if from.is_client() => self.on_abort_notice(from, ts, &keys, ctx),
            Message::Rp { meta } if from.is_client() => self.on_rp(from, meta, ctx),
            Message::InvokeFb { meta, views } if from.is_client() => self.on_invoke_fb(from, meta, &views, ctx),
            Message::ElectFb { meta, elect } if !from.is_client() => self.on_elect_fb(meta, elect, ctx),
            Message::DecFb { dec, elects } if !from.is_client() => self.on_dec_fb(dec, elects, ctx),
            _ => {}
        }
    }

    pub fn on_timer(&mut self, timer: Timer, ctx: &mut Ctx) {
        if timer == Timer::FlushBatch {
            self.flush_armed = false;
            self.flush(ctx);
        }
    }

    // ---- execution ----

    fn on_read(&mut self, from: NodeId, key: Key, ts: Timestamp, ctx: &mut Ctx) {
        if !self.mine(key) || ts.time > ctx.clock.saturating_add(self.cfg.delta) {
            return;
        }
        self.store.key_mut(key).rts.insert(ts);
        let committed = self.store.committed_before(key, ts);
        let prepared = self.store.prepared_before(key, ts);
        let committed_txn = if committed.ts == Timestamp::GENESIS {
            None
        } else {
            self.txns.get(&committed.txn_id).and_then(|e| e.finalized.clone())
        };
        let prepared_meta = prepared.and_then(|p| self.txns.get(&p.txn_id)?.meta.clone());
        ctx.log(Event::ReadServed {
            replica: self.id,
            client: from,
            key,
            req_ts: ts,
            committed: Some(committed),
            prepared,
        });
        let body = ReadReplyBody { replica: self.id, key, req_ts: ts, committed: Some(committed), prepared };
        ctx.send(
            from,
            Message::ReadReply { reply: Signed::pending(body), committed: committed_txn, prepared: prepared_meta },
        );
    }

    fn on_abort_notice(&mut self, from: NodeId, ts: Timestamp, keys: &[Key], ctx: &mut Ctx) {
        if from.client_id() != Some(ts.client) {
            self.misbehavior(ctx, from, "abort notice for another client's transaction");
            return;
        }
        for k in keys {
            if self.mine(*k) {
                if let Some(s) = self.store.key(*k) {
                    if s.rts.contains(&ts) {
                        self.store.key_mut(*k).rts.remove(&ts);
                    }
                }
            }
        }
    }

    // ---- stage 1 ----

    fn on_p1(&mut self, from: NodeId, meta: Arc<TxnMeta>, ctx: &mut Ctx) {
        if !meta.touches_shard(self.shard, self.cfg.params.num_shards) {
            return;
        }
        let id = meta.id();
        self.entry(&meta);
        let e = &self.txns[&id];
        if e.vote.is_some() {
            let reply = self.p1_reply(&id);
            ctx.send(from, reply);
            return;
        }
        if let Some(c) = e.finalized.clone() {
            ctx.send(from, self.cert_reply(c));
            return;
        }
        self.txns.get_mut(&id).unwrap().parked.insert(from);
        if !self.txns[&id].checked {
            self.run_check(&meta, ctx);
        }
    }

    fn run_check(&mut self, meta: &Arc<TxnMeta>, ctx: &mut Ctx) {
        let id = meta.id();
        self.entry(meta).checked = true;
        match self.mvtso_check(meta, ctx.clock) {
            CheckOutcome::Vote(d, conflict) => self.cast_vote(&id, d, conflict, ctx),
            CheckOutcome::Blocked(by) => {
                self.txns.get_mut(&id).unwrap().blocker = Some(by);
                self.cast_vote(&id, Decision::Abort, None, ctx);
            }
            CheckOutcome::Misbehavior(what) => {
                self.misbehavior(ctx, NodeId::Client(meta.ts.client), what);
                self.cast_vote(&id, Decision::Abort, None, ctx);
            }
            CheckOutcome::Wait(deps) => {
                for d in &deps {
                    self.waiters.entry(*d).or_default().insert(id);
                }
                self.txns.get_mut(&id).unwrap().pending_deps = deps;
            }
        }
    }

    fn cast_vote(&mut self, id: &Digest, d: Decision, conflict: Option<Arc<CertifiedTxn>>, ctx: &mut Ctx) {
        let e = self.txns.get_mut(id).expect("entry exists");
        debug_assert!(e.vote.is_none());
        e.vote = Some((d, conflict.clone()));
        let parked = std::mem::take(&mut e.parked);
        let deferred = std::mem::take(&mut e.elect_deferred);
        ctx.log(Event::VoteCast { replica: self.id, txn_id: *id, vote: d, conflict: conflict.is_some() });
        for c in parked {
            let reply = self.p1_reply(id);
            ctx.send(c, reply);
        }
        if deferred {
            self.send_elect(id, ctx);
        }
    }

    fn p1_reply(&self, id: &Digest) -> Message {
        let e = &self.txns[id];
        let (vote, conflict) = e.vote.clone().expect("voted");
        let blocker = e
            .blocker
            .and_then(|b| self.txns.get(&b))
            .filter(|b| b.finalized.is_none())
            .and_then(|b| b.meta.clone());
        Message::P1Reply(P1Reply {
            p1r: Signed::pending(P1rBody { txn_id: *id, replica: self.id, vote }),
            conflict,
            blocker,
        })
    }

    fn cert_reply(&self, cert: Arc<CertifiedTxn>) -> Message {
        Message::RecoveryReply(RecoveryReply {
            txn_id: cert.id(),
            cert: Some(cert),
            p1: None,
            p2r: None,
            pending_deps: Vec::new(),
        })
    }

    fn resolve_dep(&mut self, waiter: Digest, dep: Digest, decision: Decision, ctx: &mut Ctx) {
        let Some(e) = self.txns.get_mut(&waiter) else { return };
        if e.vote.is_some() || e.finalized.is_some() || !e.pending_deps.remove(&dep) {
            return;
        }
        match decision {
            Decision::Abort => {
                e.pending_deps.clear();
                let meta = e.meta.clone().expect("checked txn has meta");
                self.unprepare(&meta);
                self.cast_vote(&waiter, Decision::Abort, None, ctx);
            }
            Decision::Commit if e.pending_deps.is_empty() => {
                self.cast_vote(&waiter, Decision::Commit, None, ctx);
            }
            Decision::Commit => {}
        }
    }

    // ---- stage 2 ----

    fn p2r(&self, id: &Digest) -> Signed<P2rBody> {
        let e = self.txns.get(id);
        let logged = e.and_then(|e| e.logged);
        Signed::pending(P2rBody {
            txn_id: *id,
            replica: self.id,
            decision: logged.map(|(d, _)| d),
            view_decision: logged.map_or(0, |(_, v)| v),
            view_current: e.map_or(0, |e| e.view_current),
        })
    }

    fn on_p2(
        &mut self,
        from: NodeId,
        meta: Arc<TxnMeta>,
        decision: Decision,
        tallies: &[crate::cert::VoteBundle],
        view: View,
        ctx: &mut Ctx,
    ) {
        if !self.is_logging_shard(&meta) {
            return;
        }
        let id = meta.id();
        let e = self.entry(&meta);
        e.interested.insert(from);
        if view == 0 && e.logged.is_none() && e.view_current == 0 {
            let params = self.cfg.params;
            if let Some(backing) = validate_p2(decision, tallies, &meta, params, &mut self.verify) {
                self.txns.get_mut(&id).unwrap().logged = Some((decision, 0));
                let backing = (decision == Decision::Abort).then_some(backing);
                ctx.log(Event::Logged { replica: self.id, txn_id: id, decision, view: 0, backing });
            } else {
                self.misbehavior(ctx, from, "unjustified stage-2 decision");
            }
        }
        ctx.send(from, Message::P2Reply(self.p2r(&id)));
    }

    // ---- writeback ----

    fn on_writeback(&mut self, from: NodeId, txn: Arc<CertifiedTxn>, ctx: &mut Ctx) {
        if !txn.meta.touches_shard(self.shard, self.cfg.params.num_shards) {
            return;
        }
        let id = txn.id();
        if let Some(done) = self.txns.get(&id).and_then(|e| e.finalized.as_ref()) {
            if done.cert.decision != txn.cert.decision && txn.verify(self.cfg.params, &mut self.verify) {
                ctx.log(Event::InvariantViolation {
                    what: format!("{}: conflicting certificates for {}", self.id, id.to_hex()),
                });
            }
            return;
        }
        if !verify_cert(&txn.cert, &txn.meta, self.cfg.params, &mut self.verify) {
            self.misbehavior(ctx, from, "invalid decision certificate");
            return;
        }
        self.finalize(txn, ctx);
    }

    /// Apply a verified certificate. Idempotent.
    pub fn finalize(&mut self, txn: Arc<CertifiedTxn>, ctx: &mut Ctx) {
        let id = txn.id();
        let meta = txn.meta.clone();
        if self.entry(&meta).finalized.is_some() {
            return;
        }
        let decision = txn.cert.decision;
        let was_prepared = self.txns[&id].prepared;
        match decision {
            Decision::Commit => {
                for (k, _) in &meta.write_set {
                    if self.mine(*k) {
                        let s = self.store.key_mut(*k);
                        if s.prepared.get(&meta.ts) == Some(&id) {
                            s.prepared.remove(&meta.ts);
                        }
                        s.committed.insert(meta.ts, id);
                    }
                }
                for (k, rv) in &meta.read_set {
                    if self.mine(*k) {
                        let s = self.store.key_mut(*k);
                        s.readers.insert(meta.ts, (*rv, id));
                        s.rts.remove(&meta.ts);
                    }
                }
            }
            Decision::Abort => {
                if was_prepared {
                    self.unprepare(&meta);
                }
                for (k, _) in &meta.read_set {
                    if self.mine(*k) {
                        self.store.key_mut(*k).rts.remove(&meta.ts);
                    }
                }
            }
        }
        let e = self.txns.get_mut(&id).unwrap();
        e.prepared = false;
        e.finalized = Some(txn.clone());
        e.pending_deps.clear();
        let parked = std::mem::take(&mut e.parked);
        ctx.log(Event::Finalized { replica: self.id, txn_id: id, decision });
        ctx.log(Event::Certificate { txn: txn.clone() });
        ctx.log(Event::CertAccepted { node: self.id, txn_id: id, decision });
        for c in parked {
            ctx.send(c, self.cert_reply(txn.clone()));
        }
        if let Some(ws) = self.waiters.remove(&id) {
            for w in ws {
                self.resolve_dep(w, id, decision, ctx);
            }
        }
    }

    // ---- fallback ----

    fn on_rp(&mut self, from: NodeId, meta: Arc<TxnMeta>, ctx: &mut Ctx) {
        if !meta.touches_shard(self.shard, self.cfg.params.num_shards) {
            return;
        }
        let id = meta.id();
        self.entry(&meta).interested.insert(from);
        if let Some(c) = self.txns[&id].finalized.clone() {
            ctx.send(from, self.cert_reply(c));
            return;
        }
        if !self.txns[&id].checked {
            self.run_check(&meta, ctx);
        }
        let e = &self.txns[&id];
        let p1 = e.vote.is_some().then(|| match self.p1_reply(&id) {
            Message::P1Reply(r) => r,
            _ => unreachable!(),
        });
        let pending_deps = e
            .pending_deps
            .iter()
            .filter_map(|d| self.txns.get(d).and_then(|x| x.meta.clone()))
            .collect();
        let p2r = self.is_logging_shard(&meta).then(|| self.p2r(&id));
        if p1.is_none() {
            self.txns.get_mut(&id).unwrap().parked.insert(from);
        }
        ctx.send(from, Message::RecoveryReply(RecoveryReply { txn_id: id, cert: None, p1, p2r, pending_deps }));
    }

    fn push_state(&self, id: &Digest, ctx: &mut Ctx) {
        if let Some(e) = self.txns.get(id) {
            for c in &e.interested {
                ctx.send(*c, Message::P2Reply(self.p2r(id)));
            }
        }
    }

    fn on_invoke_fb(&mut self, from: NodeId, meta: Arc<TxnMeta>, views: &[Signed<P2rBody>], ctx: &mut Ctx) {
        if !self.is_logging_shard(&meta) {
            return;
        }
        let id = meta.id();
        self.entry(&meta).interested.insert(from);
        if self.txns[&id].finalized.is_some() {
            let c = self.txns[&id].finalized.clone().unwrap();
            ctx.send(from, self.cert_reply(c));
            return;
        }
        let params = self.cfg.params;
        let mut seen = BTreeSet::new();
        let mut reported = Vec::with_capacity(views.len());
        for v in views {
            if v.body.txn_id != id || !params.is_replica_of(v.body.replica, self.shard) || !seen.insert(v.body.replica)
            {
                self.misbehavior(ctx, from, "malformed InvokeFB view");
                return;
            }
            if !v.verify(&mut self.verify) {
                self.misbehavior(ctx, from, "bad signature in InvokeFB view");
                return;
            }
            reported.push(v.body.view_current);
        }
        let e = &self.txns[&id];
        let cur = e.view_current;
        let timed_out = ctx.now >= e.view_entered_at + view_timeout(self.cfg.view_timeout_base, cur);
        let new = next_view(cur, &reported, params, self.cfg.no_proof_view1, timed_out);
        if new > cur {
            let e = self.txns.get_mut(&id).unwrap();
            e.view_current = new;
            e.view_entered_at = ctx.now;
            ctx.log(Event::ViewChanged { replica: self.id, txn_id: id, from: cur, to: new });
            self.send_elect(&id, ctx);
            self.push_state(&id, ctx);
        } else {
            if cur >= 1 && self.txns[&id].logged.map(|(_, v)| v) != Some(cur) {
                self.send_elect(&id, ctx);
            }
            ctx.send(from, Message::P2Reply(self.p2r(&id)));
        }
    }

    fn send_elect(&mut self, id: &Digest, ctx: &mut Ctx) {
        let decision_of = |e: &TxnEntry| e.logged.map(|(d, _)| d).or(e.vote.as_ref().map(|(d, _)| *d));
        let Some(meta) = self.txns.get(id).and_then(|e| e.meta.clone()) else { return };
        if decision_of(&self.txns[id]).is_none() && !self.txns[id].checked {
            self.run_check(&meta, ctx);
        }
        let e = self.txns.get_mut(id).unwrap();
        let Some(decision) = decision_of(e) else {
            e.elect_deferred = true;
            return;
        };
        let view = e.view_current;
        if view == 0 {
            return;
        }
        let leader = NodeId::replica(self.shard, leader_index(view, id, self.cfg.params.n()));
        let body = ElectFbBody { txn_id: *id, replica: self.id, decision, view };
        ctx.send(leader, Message::ElectFb { meta, elect: Signed::pending(body) });
    }

    fn on_elect_fb(&mut self, meta: Arc<TxnMeta>, elect: Signed<ElectFbBody>, ctx: &mut Ctx) {
        let id = meta.id();
        let params = self.cfg.params;
        let b = &elect.body;
        if b.txn_id != id
            || !params.is_replica_of(b.replica, self.shard)
            || !self.is_logging_shard(&meta)
            || Some(leader_index(b.view, &id, params.n())) != self.id.replica_index()
            || !elect.verify(&mut self.verify)
        {
            return;
        }
        let view = b.view;
        let sender = b.replica;
        let me = self.id;
        let e = self.entry(&meta);
        if let Some(dec) = e.led.get(&view) {
            ctx.send(sender, dec.clone());
            return;
        }
        let buf = e.elect_buffer.entry(view).or_default();
        buf.insert(sender, elect);
        if buf.len() < params.elect_quorum() {
            return;
        }
        let chosen: Vec<_> = buf.values().take(params.elect_quorum()).cloned().collect();
        let decision = majority(chosen.iter().map(|x| x.body.decision));
        let dec = DecFbBody { txn_id: id, leader: me, decision, view };
        let msg = Message::DecFb { dec: Signed::pending(dec), elects: chosen };
        e.led.insert(view, msg.clone());
        ctx.log(Event::ElectionWon { leader: me, txn_id: id, view, decision });
        ctx.broadcast(params.replicas(self.shard), &msg);
    }

    fn on_dec_fb(&mut self, dec: Signed<DecFbBody>, elects: Vec<Signed<ElectFbBody>>, ctx: &mut Ctx) {
        let params = self.cfg.params;
        let b = dec.body.clone();
        let mut seen = BTreeSet::new();
        let well_formed = params.is_replica_of(b.leader, self.shard)
            && b.leader.replica_index() == Some(leader_index(b.view, &b.txn_id, params.n()))
            && elects.len() == params.elect_quorum()
            && elects.iter().all(|x| {
                x.body.txn_id == b.txn_id
                    && x.body.view == b.view
                    && params.is_replica_of(x.body.replica, self.shard)
                    && seen.insert(x.body.replica)
            })
            && majority(elects.iter().map(|x| x.body.decision)) == b.decision;
        if !well_formed || !dec.verify(&mut self.verify) || !elects.iter().all(|x| x.verify(&mut self.verify)) {
            return;
        }
        let e = self.txns.entry(b.txn_id).or_default();
        if e.finalized.is_some() || e.view_current > b.view || e.logged == Some((b.decision, b.view)) {
            return;
        }
        let from = e.view_current;
        e.view_current = b.view;
        if from < b.view {
            e.view_entered_at = ctx.now;
            ctx.log(Event::ViewChanged { replica: self.id, txn_id: b.txn_id, from, to: b.view });
        }
        e.logged = Some((b.decision, b.view));
        let backing = (b.decision == Decision::Abort).then(|| AbortBacking {
            voters: elects.iter().filter(|x| x.body.decision == Decision::Abort).map(|x| x.body.replica).collect(),
            conflict: false,
        });
        ctx.log(Event::Logged { replica: self.id, txn_id: b.txn_id, decision: b.decision, view: b.view, backing });
        self.push_state(&b.txn_id, ctx);
    }

    // ---- signing ----

    /// Sign (or queue for batch signing) every unsigned outbound reply.
    pub fn seal(&mut self, ctx: &mut Ctx) {
        let sends = std::mem::take(&mut ctx.sends);
        for (to, mut msg) in sends {
            let slots = msg.signing_slots();
            if slots.is_empty() {
                ctx.sends.push((to, msg));
            } else if self.cfg.batch_size <= 1 {
                for (bytes, auth) in slots {
                    *auth = Auth::Direct(self.key.sign(bytes.as_slice()));
                }
                ctx.sends.push((to, msg));
            } else {
                self.batch_leaves += slots.len();
                self.batch.push((to, msg));
            }
        }
        if self.batch_leaves >= self.cfg.batch_size {
            self.flush(ctx);
        } else if !self.batch.is_empty() && !self.flush_armed {
            self.flush_armed = true;
            ctx.set_timer(self.cfg.batch_window, Timer::FlushBatch);
        }
    }

    fn flush(&mut self, ctx: &mut Ctx) {
        if self.batch.is_empty() {
            return;
        }
        let mut batch = std::mem::take(&mut self.batch);
        self.batch_leaves = 0;
        {
            let mut slots: Vec<_> = batch.iter_mut().flat_map(|(_, m)| m.signing_slots()).collect();
            for chunk in slots.chunks_mut(self.cfg.batch_size.max(1)) {
                let leaves: Vec<_> = chunk.iter().map(|(b, _)| b.clone()).collect();
                let (mb, proofs) = build_batch(&self.key, &leaves).expect("non-empty chunk");
                for ((_, auth), proof) in chunk.iter_mut().zip(proofs) {
                    **auth = Auth::Batched { root: mb.root, sig: mb.root_signature.clone(), proof };
                }
            }
        }
        ctx.sends.extend(batch);
    }

    /// The certificate every key's initial version carries.
    pub fn genesis(&self) -> &Arc<CertifiedTxn> {
        &self.genesis
    }

    /// Latest committed version of `k` below `before`.
    pub fn committed_version(&self, k: Key, before: Timestamp) -> VersionRef {
        self.store.committed_before(k, before)
    }
}
