//! The client state machine: execution, Stage 1 and 2, writeback, and
//! recovery of stalled transactions.

mod coord;
pub mod views;

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::adversary::{ClientBehavior, SharedBoard};
use crate::cert::{
    classify_votes, conflict_keys, logging_shard, BundleKind, CertEvidence, CertifiedTxn, Classification,
    DecisionCert, VoteBundle,
};
use crate::crypto::{Digest, Keyring, VerifyCtx};
use crate::history::Event;
use crate::messages::{Message, P1Reply, P1rBody, P2rBody, ReadReplyBody, RecoveryReply, Signed, VersionRef};
use crate::node::{Ctx, Timer};
use crate::replica::fallback::view_timeout;
use crate::types::{shard_of, Decision, Key, NodeId, Params, ShardId, Timestamp, TxnMeta, Value, View};
use crate::workload::{Generator, Op, Script};

pub use views::{reconcile_views, Reconcile, ViewStrategy};

/// Read replies a client waits for before choosing a version.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ReadQuorum {
    #[default]
    #[serde(rename = "f+1")]
    FPlus1,
    #[serde(rename = "2f+1")]
    TwoFPlus1,
}

impl ReadQuorum {
    pub fn replies(self, params: Params) -> usize {
        match self {
            ReadQuorum::FPlus1 => params.f() + 1,
            ReadQuorum::TwoFPlus1 => 2 * params.f() + 1,
        }
    }

    /// Replicas contacted up front: `f` more than the replies needed.
    pub fn fan_out(self, params: Params) -> usize {
        (self.replies(params) + params.f()).min(params.n())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClientConfig {
    pub params: Params,
    pub read_quorum: ReadQuorum,
    pub read_timeout: u64,
    /// How long Stage 1 waits for a unanimous shard before settling for a tally.
    pub tau_fast: u64,
    /// How long Stage 1 may stall before the client recovers its dependencies.
    pub tau_dep: u64,
    /// Retransmission and escalation period for Stage 2 and recovery.
    pub stage_timeout: u64,
    pub view_timeout_base: u64,
    pub view_strategy: ViewStrategy,
    pub backoff_base: u64,
    pub backoff_cap: u64,
    /// No transaction is begun at or after this time.
    pub admit_until: u64,
}

impl ClientConfig {
    pub fn new(params: Params, one_way: u64) -> Self {
        ClientConfig {
            params,
            read_quorum: ReadQuorum::FPlus1,
            read_timeout: 4 * one_way,
            tau_fast: 4 * one_way,
            tau_dep: 10 * one_way,
            stage_timeout: 8 * one_way,
            view_timeout_base: 100,
            view_strategy: ViewStrategy::Subsumption,
            backoff_base: 10,
            backoff_cap: 1000,
            admit_until: u64::MAX,
        }
    }
}

/// `base * 2^attempt * jitter`, jitter uniform in [0.5, 1.5], capped.
pub fn retry_delay<R: Rng + ?Sized>(base: u64, attempt: u32, cap: u64, rng: &mut R) -> u64 {
    let jitter: f64 = rng.random_range(0.5..=1.5);
    let raw = base as f64 * 2f64.powi(attempt.min(62) as i32) * jitter;
    (raw.round() as u64).min(cap)
}

/// Where a client's transactions come from.
#[derive(Clone, Debug)]
pub enum Source {
    Generated(Generator),
    Scripted(VecDeque<Script>),
}

/// Byzantine configuration of a client.
#[derive(Clone, Debug)]
pub struct ByzClient {
    pub behaviors: Vec<ClientBehavior>,
    /// Chance that an admitted transaction misbehaves.
    pub prob: f64,
    pub board: SharedBoard,
}

#[derive(Debug)]
struct PendingRead {
    key: Key,
    seq: u64,
    contacted: BTreeSet<NodeId>,
    replies: BTreeMap<NodeId, (ReadReplyBody, Option<Arc<CertifiedTxn>>, Option<Arc<TxnMeta>>)>,
    widened: bool,
}

#[derive(Debug)]
struct Exec {
    script: Script,
    pc: usize,
    ts: Timestamp,
    attempt: u32,
    first_begin: u64,
    reads: Vec<(Key, Timestamp)>,
    writes: BTreeMap<Key, Value>,
    deps: Vec<(Timestamp, Digest)>,
    read: Option<PendingRead>,
    behavior: Option<ClientBehavior>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Phase {
    Stage1,
    Stage2,
    Fallback,
}

#[derive(Debug)]
struct OwnInfo {
    script: Script,
    attempt: u32,
    first_begin: u64,
    stage1_at: u64,
    behavior: Option<ClientBehavior>,
}

/// Drives one transaction (own or someone else's) to a certificate.
#[derive(Debug)]
struct Coord {
    meta: Arc<TxnMeta>,
    own: Option<OwnInfo>,
    phase: Phase,
    gen: u64,
    shards: Vec<ShardId>,
    log_shard: ShardId,
    p1: BTreeMap<ShardId, BTreeMap<NodeId, Signed<P1rBody>>>,
    conflict: Option<Arc<CertifiedTxn>>,
    /// Prepared transactions named by Abort voters, with the voters.
    blockers: BTreeMap<Digest, (Arc<TxnMeta>, BTreeSet<NodeId>)>,
    fast_expired: bool,
    p2r: BTreeMap<NodeId, Signed<P2rBody>>,
    stage2_sent: bool,
    invoked: bool,
    timed_out: bool,
}

pub struct Client {
    pub id: u64,
    me: NodeId,
    cfg: ClientConfig,
    verify: VerifyCtx,
    rng: ChaCha8Rng,
    source: Source,
    byz: Option<ByzClient>,
    last_time: u64,
    seq: u64,
    /// Guards NextTxn timers; only the latest one starts a transaction.
    loop_seq: u64,
    exec: Option<Exec>,
    coords: BTreeMap<Digest, Coord>,
    gen: u64,
    known: BTreeMap<Digest, Arc<TxnMeta>>,
    accepted: BTreeMap<Digest, Arc<CertifiedTxn>>,
    valid: BTreeSet<(Digest, Decision)>,
    genesis_id: Digest,
    /// Aborted script waiting out its backoff: (script, attempt, first begin, timer seq).
    pending_retry: Option<(Script, u32, u64, u64)>,
}

impl std::fmt::Debug for Client {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Client").field("id", &self.id).field("coords", &self.coords.len()).finish()
    }
}

impl Client {
    pub fn new(id: u64, cfg: ClientConfig, keyring: Arc<Keyring>, source: Source, seed: u64) -> Self {
        Client {
            id,
            me: NodeId::Client(id),
            cfg,
            verify: VerifyCtx::new(keyring),
            rng: ChaCha8Rng::seed_from_u64(seed),
            source,
            byz: None,
            last_time: 0,
            seq: 0,
            loop_seq: 0,
            exec: None,
            coords: BTreeMap::new(),
            gen: 0,
            known: BTreeMap::new(),
            accepted: BTreeMap::new(),
            valid: BTreeSet::new(),
            genesis_id: TxnMeta::genesis().id(),
            pending_retry: None,
        }
    }

    pub fn with_byzantine(mut self, byz: ByzClient) -> Self {
        self.byz = Some(byz);
        self
    }

    pub fn config(&self) -> &ClientConfig {
        &self.cfg
    }

    pub fn is_idle(&self) -> bool {
        self.exec.is_none() && self.coords.is_empty()
    }

    pub fn signature_checks(&self) -> u64 {
        self.verify.cache.signature_checks
    }

    pub fn accepted(&self, id: &Digest) -> Option<&Arc<CertifiedTxn>> {
        self.accepted.get(id)
    }

    fn params(&self) -> Params {
        self.cfg.params
    }

    fn next_gen(&mut self) -> u64 {
        self.gen += 1;
        self.gen
    }

    /// Kick off the closed loop.
    pub fn start(&mut self, ctx: &mut Ctx) {
        self.next_txn(ctx);
    }

    pub fn handle(&mut self, from: NodeId, msg: Message, ctx: &mut Ctx) {
        match msg {
            Message::ReadReply { reply, committed, prepared } => self.on_read_reply(from, reply, committed, prepared, ctx),
            Message::P1Reply(r) => self.on_p1_reply(from, r, ctx),
            Message::P2Reply(r) => self.on_p2_reply(from, r, ctx),
            Message::RecoveryReply(r) => self.on_recovery_reply(from, r, ctx),
            _ => {}
        }
    }

    pub fn on_timer(&mut self, timer: Timer, ctx: &mut Ctx) {
        match timer {
            Timer::NextTxn { seq } if seq == self.loop_seq && self.exec.is_none() => self.next_txn(ctx),
            Timer::Read { seq } => self.on_read_timeout(seq, ctx),
            Timer::FastWait { txn, gen } => {
                if let Some(c) = self.coords.get_mut(&txn).filter(|c| c.gen == gen) {
                    c.fast_expired = true;
                    self.progress(txn, ctx);
                }
            }
            Timer::DepStall { txn, gen } => {
                let stalled = self.coords.get(&txn).filter(|c| c.gen == gen && c.phase == Phase::Stage1);
                if let Some(c) = stalled {
                    let deps: Vec<Digest> = c.meta.dep_set.iter().map(|(_, d)| *d).collect();
                    for d in deps {
                        if let Some(m) = self.known.get(&d).cloned() {
                            self.recover(m, ctx);
                        }
                    }
                }
            }
            Timer::Blocker { txn } => {
                let decided = [Decision::Commit, Decision::Abort].iter().any(|d| self.valid.contains(&(txn, *d)));
                if !decided {
                    if let Some(m) = self.known.get(&txn).cloned() {
                        self.recover(m, ctx);
                    }
                }
            }
            Timer::Retry { txn, gen } => self.on_retry(txn, gen, ctx),
            _ => {}
        }
    }

    // ---- execution ----

    fn next_txn(&mut self, ctx: &mut Ctx) {
        if ctx.now >= self.cfg.admit_until {
            return;
        }
        if let Some((script, attempt, first, _)) = self.pending_retry.take() {
            self.begin(script, attempt, first, ctx);
            return;
        }
        let script = match &mut self.source {
            Source::Generated(g) => g.generate(&mut self.rng),
            Source::Scripted(q) => match q.pop_front() {
                Some(s) => s,
                None => return,
            },
        };
        self.begin(script, 0, ctx.now, ctx);
    }

    fn begin(&mut self, script: Script, attempt: u32, first_begin: u64, ctx: &mut Ctx) {
        let time = ctx.clock.max(self.last_time + 1);
        self.last_time = time;
        let ts = Timestamp::new(time, self.id);
        let behavior = match &self.byz {
            Some(b) if !b.behaviors.is_empty() && self.rng.random_bool(b.prob.clamp(0.0, 1.0)) => {
                Some(b.behaviors[self.rng.random_range(0..b.behaviors.len())])
            }
            _ => None,
        };
        ctx.log(Event::TxnBegin { client: self.id, ts, attempt });
        if behavior == Some(ClientBehavior::EquivForced) {
            self.plant_abort_vote(&script, ts, ctx);
        }
        self.exec = Some(Exec {
            script,
            pc: 0,
            ts,
            attempt,
            first_begin,
            reads: Vec::new(),
            writes: BTreeMap::new(),
            deps: Vec::new(),
            read: None,
            behavior,
        });
        self.execute(ctx);
    }

    /// Raise the read timestamp of one written key at one correct replica of a
    /// shard that also holds a Byzantine replica, so that replica votes Abort
    /// while the rest of the shard votes Commit.
    fn plant_abort_vote(&mut self, script: &Script, ts: Timestamp, ctx: &mut Ctx) {
        let params = self.params();
        let Some(board) = self.byz.as_ref().map(|b| b.board.clone()) else { return };
        let board = board.borrow();
        let target = script.iter().find_map(|op| match op {
            Op::Write(k, _) => {
                let s = shard_of(*k, params.num_shards);
                let byz = board.byz_in_shard(s);
                let victim = params.replicas(s).find(|r| !byz.contains(r));
                (!byz.is_empty()).then_some(victim).flatten().map(|r| (*k, r))
            }
            _ => None,
        });
        if let Some((key, victim)) = target {
            let later = Timestamp::new(ts.time + 1, self.id);
            self.last_time = later.time;
            ctx.send(victim, Message::ReadRequest { key, ts: later });
        }
    }

    /// Run operations until one needs the network or the script ends.
    fn execute(&mut self, ctx: &mut Ctx) {
        loop {
            let Some(e) = self.exec.as_mut() else { return };
            let Some(op) = e.script.get(e.pc).cloned() else { break };
            match op {
                Op::Write(k, v) => {
                    e.writes.insert(k, v);
                    e.pc += 1;
                }
                Op::Read(k) if e.writes.contains_key(&k) || e.reads.iter().any(|(rk, _)| *rk == k) => {
                    e.pc += 1;
                }
                Op::Read(k) => {
                    self.start_read(k, ctx);
                    return;
                }
            }
        }
        self.submit(ctx);
    }

    fn start_read(&mut self, key: Key, ctx: &mut Ctx) {
        let params = self.params();
        self.seq += 1;
        let seq = self.seq;
        let shard = shard_of(key, params.num_shards);
        let n = params.n() as u32;
        let first = self.rng.random_range(0..n);
        let contacted: BTreeSet<NodeId> = (0..self.cfg.read_quorum.fan_out(params) as u32)
            .map(|i| NodeId::replica(shard, (first + i) % n))
            .collect();
        let e = self.exec.as_mut().expect("executing");
        for r in &contacted {
            ctx.send(*r, Message::ReadRequest { key, ts: e.ts });
        }
        e.read = Some(PendingRead { key, seq, contacted, replies: BTreeMap::new(), widened: false });
        ctx.set_timer(self.cfg.read_timeout, Timer::Read { seq });
    }

    fn on_read_reply(
        &mut self,
        from: NodeId,
        reply: Signed<ReadReplyBody>,
        committed: Option<Arc<CertifiedTxn>>,
        prepared: Option<Arc<TxnMeta>>,
        ctx: &mut Ctx,
    ) {
        let params = self.params();
        let Some(e) = self.exec.as_ref() else { return };
        let Some(r) = e.read.as_ref() else { return };
        let b = &reply.body;
        if b.replica != from
            || b.key != r.key
            || b.req_ts != e.ts
            || !params.is_replica_of(from, shard_of(r.key, params.num_shards))
            || r.replies.contains_key(&from)
        {
            return;
        }
        if !reply.verify(&mut self.verify) {
            ctx.log(Event::Misbehavior { observer: self.me, suspect: from, what: "bad read reply signature".into() });
            return;
        }
        let r = self.exec.as_mut().unwrap().read.as_mut().unwrap();
        r.replies.insert(from, (reply.body, committed, prepared));
        if r.replies.len() >= self.cfg.read_quorum.replies(params) {
            self.try_adopt(false, ctx);
        }
    }

    fn on_read_timeout(&mut self, seq: u64, ctx: &mut Ctx) {
        let params = self.params();
        let Some(e) = self.exec.as_mut() else { return };
        let ts = e.ts;
        let Some(r) = e.read.as_mut().filter(|r| r.seq == seq) else { return };
        if !r.widened {
            r.widened = true;
            let shard = shard_of(r.key, params.num_shards);
            for rep in params.replicas(shard) {
                if r.contacted.insert(rep) || !r.replies.contains_key(&rep) {
                    ctx.send(rep, Message::ReadRequest { key: r.key, ts });
                }
            }
            ctx.set_timer(self.cfg.read_timeout, Timer::Read { seq });
            return;
        }
        let key = r.key;
        if !self.try_adopt(true, ctx) {
            ctx.log(Event::ReadFailed { client: self.id, txn_ts: ts, key });
            self.local_abort("read failed", ctx);
        }
    }

    fn committed_valid(&mut self, key: Key, req: Timestamp, v: &VersionRef, c: &Option<Arc<CertifiedTxn>>) -> bool {
        if v.ts >= req {
            return false;
        }
        if v.ts == Timestamp::GENESIS {
            return v.txn_id == self.genesis_id;
        }
        match c {
            Some(c) => {
                c.id() == v.txn_id
                    && c.meta.ts == v.ts
                    && c.meta.writes(key)
                    && c.cert.decision == Decision::Commit
                    && self.cert_valid(c)
            }
            None => false,
        }
    }

    fn cert_valid(&mut self, c: &CertifiedTxn) -> bool {
        let k = (c.id(), c.cert.decision);
        if self.valid.contains(&k) {
            return true;
        }
        let ok = c.verify(self.cfg.params, &mut self.verify);
        if ok {
            self.valid.insert(k);
        }
        ok
    }

    /// Pick the highest valid version among the replies. Returns false when
    /// none is valid yet.
    fn try_adopt(&mut self, _final: bool, ctx: &mut Ctx) -> bool {
        let params = self.params();
        let e = self.exec.as_mut().expect("executing");
        let req = e.ts;
        let r = e.read.take().expect("pending read");
        let key = r.key;
        // (version, writer meta, prepared?) -> backing replicas
        let mut committed: BTreeMap<VersionRef, (Option<Arc<TxnMeta>>, Vec<NodeId>)> = BTreeMap::new();
        let mut prepared: BTreeMap<VersionRef, (Arc<TxnMeta>, Vec<NodeId>)> = BTreeMap::new();
        let mut reports = Vec::new();
        for (rep, (body, c, p)) in &r.replies {
            if let Some(v) = &body.committed {
                reports.push((*rep, v.ts));
                if self.committed_valid(key, req, v, c) {
                    let slot = committed.entry(*v).or_insert_with(|| (c.as_ref().map(|c| c.meta.clone()), Vec::new()));
                    slot.1.push(*rep);
                }
            }
            if let (Some(v), Some(m)) = (&body.prepared, p) {
                if m.id() == v.txn_id && m.ts == v.ts && v.ts < req && v.ts.time > 0 && m.writes(key) {
                    prepared.entry(*v).or_insert_with(|| (m.clone(), Vec::new())).1.push(*rep);
                }
            }
        }
        let best_c = committed.into_iter().next_back();
        let best_p = prepared.into_iter().rev().find(|(_, (_, reps))| reps.len() >= params.abort_quorum());
        let choice = match (best_c, best_p) {
            (Some(c), Some(p)) if p.0.ts > c.0.ts => Some((p.0, Some(p.1 .0), p.1 .1, true)),
            (Some(c), _) => Some((c.0, c.1 .0, c.1 .1, false)),
            (None, Some(p)) => Some((p.0, Some(p.1 .0), p.1 .1, true)),
            (None, None) => None,
        };
        let e = self.exec.as_mut().unwrap();
        let Some((version, meta, sources, is_prepared)) = choice else {
            e.read = Some(r);
            return false;
        };
        e.reads.push((key, version.ts));
        if is_prepared {
            e.deps.push((version.ts, version.txn_id));
            if let Some(m) = meta {
                self.known.insert(version.txn_id, m);
            }
        }
        e.pc += 1;
        ctx.log(Event::ReadAdopted {
            client: self.id,
            txn_ts: req,
            key,
            version: version.ts,
            writer: version.txn_id,
            prepared: is_prepared,
            sources,
            committed_reports: reports,
        });
        self.execute(ctx);
        true
    }

    fn local_abort(&mut self, reason: &str, ctx: &mut Ctx) {
        let params = self.params();
        let Some(e) = self.exec.take() else { return };
        let mut shards: BTreeSet<ShardId> = BTreeSet::new();
        for (k, _) in &e.reads {
            shards.insert(shard_of(*k, params.num_shards));
        }
        for s in shards {
            let keys: Vec<Key> =
                e.reads.iter().map(|(k, _)| *k).filter(|k| shard_of(*k, params.num_shards) == s).collect();
            ctx.broadcast(params.replicas(s), &Message::AbortNotice { ts: e.ts, keys });
        }
        ctx.log(Event::LocalAbort { client: self.id, ts: e.ts, reason: reason.into() });
        self.after_abort(e.script, e.attempt, e.first_begin, ctx);
    }

    fn after_abort(&mut self, script: Script, attempt: u32, first_begin: u64, ctx: &mut Ctx) {
        if self.byz.is_some() {
            // Faulty clients do not retry.
            self.schedule_next(0, ctx);
            return;
        }
        let delay = retry_delay(self.cfg.backoff_base, attempt, self.cfg.backoff_cap, &mut self.rng);
        self.schedule_next(delay, ctx);
        // Re-run the same script under a fresh timestamp.
        self.pending_retry = Some((script, attempt + 1, first_begin, self.loop_seq));
    }
}
