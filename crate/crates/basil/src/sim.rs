//! Seeded discrete-event simulation of one Basil deployment.

use std::cell::RefCell;
use std::cmp::Ordering;
use std::collections::{BTreeMap, BinaryHeap, VecDeque};
use std::rc::Rc;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};

use crate::adversary::{filter_replica_sends, AdversaryBoard, ClientBehavior, ReplicaBehavior, SharedBoard};
use crate::client::{ByzClient, Client, ClientConfig, ReadQuorum, Source, ViewStrategy};
use crate::crypto::{Digest, Keyring, SignatureScheme};
use crate::history::{Event, Header, HistoryLog, Roster};
use crate::messages::Message;
use crate::metrics::{Counters, Metrics};
use crate::node::{Ctx, Timer};
use crate::replica::{Replica, ReplicaConfig};
use crate::types::{NodeId, Params, ShardId};
use crate::workload::{Generator, Script, WorkloadSpec};
use crate::Error;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DelayModel {
    /// Smallest one-way delay.
    pub min: u64,
    /// Largest one-way delay after GST (Δ).
    pub max: u64,
    /// Mean of the extra exponential delay before GST.
    pub pre_gst_mean: u64,
    /// Probability that a message sent before GST is lost.
    pub pre_gst_drop: f64,
}

impl Default for DelayModel {
    fn default() -> Self {
        DelayModel { min: 1, max: 10, pre_gst_mean: 40, pre_gst_drop: 0.0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    pub seed: u64,
    pub f: u32,
    pub shards: u32,
    pub clients: u32,
    /// Fraction of clients that are Byzantine.
    pub byz_client_frac: f64,
    pub byz_client_behaviors: Vec<ClientBehavior>,
    /// Chance that a Byzantine client's transaction misbehaves.
    pub byz_client_prob: f64,
    pub byz_replicas_per_shard: u32,
    pub byz_replica_behaviors: Vec<ReplicaBehavior>,
    pub delay: DelayModel,
    pub gst: u64,
    pub delta: u64,
    pub clock_skew: bool,
    /// Stage-1 wait for a unanimous shard; default 4 max delays.
    pub tau_fast: Option<u64>,
    /// Stage-1 stall before recovering dependencies; default 10 max delays.
    pub tau_dep: Option<u64>,
    pub stage_timeout: Option<u64>,
    pub read_timeout: Option<u64>,
    pub view_timeout_base: u64,
    pub no_proof_view1: bool,
    /// Simulated time during which clients begin transactions.
    pub duration: u64,
    /// Extra time allowed for in-flight work after `duration`.
    pub quiesce: u64,
    pub batch_size: usize,
    pub batch_window: u64,
    pub read_quorum: ReadQuorum,
    pub view_strategy: ViewStrategy,
    pub signature: SignatureScheme,
    pub backoff_base: u64,
    pub backoff_cap: u64,
    pub workload: WorkloadSpec,
    /// Check the view-closeness invariant at every view change.
    pub observe_views: bool,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            seed: 1,
            f: 1,
            shards: 1,
            clients: 4,
            byz_client_frac: 0.0,
            byz_client_behaviors: Vec::new(),
            byz_client_prob: 1.0,
            byz_replicas_per_shard: 0,
            byz_replica_behaviors: Vec::new(),
            delay: DelayModel::default(),
            gst: 0,
            delta: 50,
            clock_skew: false,
            tau_fast: None,
            tau_dep: None,
            stage_timeout: None,
            read_timeout: None,
            view_timeout_base: 100,
            no_proof_view1: true,
            duration: 2000,
            quiesce: 20_000,
            batch_size: 1,
            batch_window: 2,
            read_quorum: ReadQuorum::FPlus1,
            view_strategy: ViewStrategy::Subsumption,
            signature: SignatureScheme::Mock,
            backoff_base: 10,
            backoff_cap: 1000,
            workload: WorkloadSpec::default(),
            observe_views: true,
        }
    }
}

impl SimConfig {
    pub fn params(&self) -> Params {
        Params::new(self.f, self.shards)
    }

    pub fn validate(&self) -> Result<(), Error> {
        let bad = |field: &str, why: &str| Err(Error::Config(format!("{field}: {why}")));
        if self.f == 0 {
            return bad("f", "must be at least 1");
        }
        if self.shards == 0 {
            return bad("shards", "must be at least 1");
        }
        if self.byz_replicas_per_shard > self.f {
            return bad("byz_replicas_per_shard", "cannot exceed f");
        }
        if self.byz_replicas_per_shard > 0 && self.byz_replica_behaviors.is_empty() {
            return bad("byz_replica_behaviors", "needed when byz_replicas_per_shard > 0");
        }
        if !(0.0..=1.0).contains(&self.byz_client_frac) {
            return bad("byz_client_frac", "must be within [0, 1]");
        }
        if self.byz_client_frac > 0.0 && self.byz_client_behaviors.is_empty() {
            return bad("byz_client_behaviors", "needed when byz_client_frac > 0");
        }
        if !(0.0..=1.0).contains(&self.byz_client_prob) {
            return bad("byz_client_prob", "must be within [0, 1]");
        }
        if self.delay.min > self.delay.max {
            return bad("delay.min", "must not exceed delay.max");
        }
        if !(0.0..1.0).contains(&self.delay.pre_gst_drop) {
            return bad("delay.pre_gst_drop", "must be within [0, 1)");
        }
        if self.batch_size == 0 {
            return bad("batch_size", "must be at least 1");
        }
        self.workload.validate()
    }

    fn one_way(&self) -> u64 {
        self.delay.max.max(1)
    }

    pub fn client_config(&self) -> ClientConfig {
        let d = self.one_way();
        let mut c = ClientConfig::new(self.params(), d);
        c.tau_fast = self.tau_fast.unwrap_or(4 * d);
        c.tau_dep = self.tau_dep.unwrap_or(10 * d);
        c.stage_timeout = self.stage_timeout.unwrap_or(8 * d);
        c.read_timeout = self.read_timeout.unwrap_or(4 * d);
        c.view_timeout_base = self.view_timeout_base;
        c.view_strategy = self.view_strategy;
        c.read_quorum = self.read_quorum;
        c.backoff_base = self.backoff_base;
        c.backoff_cap = self.backoff_cap;
        c.admit_until = self.duration;
        c
    }

    pub fn replica_config(&self) -> ReplicaConfig {
        ReplicaConfig {
            params: self.params(),
            delta: self.delta,
            no_proof_view1: self.no_proof_view1,
            view_timeout_base: self.view_timeout_base,
            batch_size: self.batch_size,
            batch_window: self.batch_window,
        }
    }
}

#[derive(Debug)]
enum SimEvent {
    Start(u64),
    Deliver { from: NodeId, to: NodeId, msg: Message },
    Timer { node: NodeId, timer: Timer },
}

#[derive(Debug)]
struct Item {
    time: u64,
    seq: u64,
    ev: SimEvent,
}

impl PartialEq for Item {
    fn eq(&self, other: &Self) -> bool {
        (self.time, self.seq) == (other.time, other.seq)
    }
}
impl Eq for Item {}
impl PartialOrd for Item {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Item {
    // Reversed: BinaryHeap is a max-heap and we pop the earliest.
    fn cmp(&self, other: &Self) -> Ordering {
        (other.time, other.seq).cmp(&(self.time, self.seq))
    }
}

struct ReplicaSlot {
    replica: Replica,
    byz: Option<ReplicaBehavior>,
    skew: i64,
}

struct ClientSlot {
    client: Client,
    skew: i64,
}

/// The result of one simulation.
#[derive(Debug)]
pub struct Outcome {
    pub log: HistoryLog,
    pub metrics: Metrics,
}

pub struct Sim {
    cfg: SimConfig,
    params: Params,
    now: u64,
    seq: u64,
    queue: BinaryHeap<Item>,
    net_rng: ChaCha8Rng,
    replicas: BTreeMap<NodeId, ReplicaSlot>,
    clients: BTreeMap<u64, ClientSlot>,
    board: SharedBoard,
    log: HistoryLog,
    counters: Counters,
    roster: Roster,
    end: u64,
}

fn skew_of(rng: &mut ChaCha8Rng, enabled: bool, delta: u64) -> i64 {
    if !enabled || delta < 2 {
        return 0;
    }
    let half = (delta / 2) as i64;
    rng.random_range(-half..=half)
}

impl Sim {
    pub fn new(cfg: SimConfig) -> Result<Self, Error> {
        cfg.validate()?;
        let params = cfg.params();
        let mut setup = ChaCha8Rng::seed_from_u64(cfg.seed);
        let client_ids: Vec<u64> = (0..cfg.clients as u64).collect();
        let identities = params.all_replicas().chain(client_ids.iter().map(|c| NodeId::Client(*c)));
        let keyring = Arc::new(Keyring::new(cfg.signature, cfg.seed, identities));

        let mut byz_replicas = Vec::new();
        for s in 0..cfg.shards {
            let mut idx: Vec<u32> = (0..params.n() as u32).collect();
            idx.shuffle(&mut setup);
            for &i in idx.iter().take(cfg.byz_replicas_per_shard as usize) {
                let b = cfg.byz_replica_behaviors[setup.random_range(0..cfg.byz_replica_behaviors.len())];
                byz_replicas.push((NodeId::replica(s, i), b));
            }
        }
        let board: SharedBoard =
            Rc::new(RefCell::new(AdversaryBoard::new(keyring.clone(), byz_replicas.iter().map(|(r, _)| *r))));

        let mut replicas = BTreeMap::new();
        for id in params.all_replicas() {
            let byz = byz_replicas.iter().find(|(r, _)| *r == id).map(|(_, b)| *b);
            let skew = skew_of(&mut setup, cfg.clock_skew, cfg.delta);
            let replica = Replica::new(id, cfg.replica_config(), keyring.clone());
            replicas.insert(id, ReplicaSlot { replica, byz, skew });
        }

        let n_byz = (cfg.byz_client_frac * cfg.clients as f64).round() as usize;
        let mut shuffled = client_ids.clone();
        shuffled.shuffle(&mut setup);
        let byz_clients: Vec<u64> = {
            let mut v: Vec<u64> = shuffled.into_iter().take(n_byz).collect();
            v.sort_unstable();
            v
        };
        let mut clients = BTreeMap::new();
        for &c in &client_ids {
            let gen = Generator::new(&cfg.workload, c)?;
            let seed = setup.random::<u64>();
            let mut client = Client::new(c, cfg.client_config(), keyring.clone(), Source::Generated(gen), seed);
            if byz_clients.contains(&c) {
                client = client.with_byzantine(ByzClient {
                    behaviors: cfg.byz_client_behaviors.clone(),
                    prob: cfg.byz_client_prob,
                    board: board.clone(),
                });
            }
            let skew = skew_of(&mut setup, cfg.clock_skew, cfg.delta);
            clients.insert(c, ClientSlot { client, skew });
        }

        let behaviors = cfg.byz_client_behaviors.iter().map(|b| b.name()).collect::<Vec<_>>().join(",");
        let roster = Roster {
            byz_replicas: byz_replicas.iter().map(|(r, b)| (*r, b.name().to_string())).collect(),
            byz_clients: byz_clients.iter().map(|c| (*c, behaviors.clone())).collect(),
            clients: client_ids,
        };
        let net_rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x6e65_7477_6f72_6b00);
        let end = cfg.duration.saturating_add(cfg.quiesce);
        Ok(Sim {
            params,
            now: 0,
            seq: 0,
            queue: BinaryHeap::new(),
            net_rng,
            replicas,
            clients,
            board,
            log: HistoryLog::new(),
            counters: Counters::default(),
            roster,
            end,
            cfg,
        })
    }

    pub fn config(&self) -> &SimConfig {
        &self.cfg
    }

    pub fn roster(&self) -> &Roster {
        &self.roster
    }

    pub fn replica(&self, id: NodeId) -> Option<&Replica> {
        self.replicas.get(&id).map(|s| &s.replica)
    }

    pub fn client(&self, id: u64) -> Option<&Client> {
        self.clients.get(&id).map(|s| &s.client)
    }

    /// Replace a client's workload with fixed scripts.
    pub fn script_client(&mut self, id: u64, scripts: impl IntoIterator<Item = Script>) {
        if let Some(slot) = self.clients.get_mut(&id) {
            let cfg = slot.client.config().clone();
            let keyring = self.board.borrow().keyring.clone();
            let byz = self.roster.is_byz(NodeId::Client(id));
            let mut c = Client::new(id, cfg, keyring, Source::Scripted(VecDeque::from_iter(scripts)), self.cfg.seed ^ id);
            if byz {
                c = c.with_byzantine(ByzClient {
                    behaviors: self.cfg.byz_client_behaviors.clone(),
                    prob: self.cfg.byz_client_prob,
                    board: self.board.clone(),
                });
            }
            slot.client = c;
        }
    }

    /// Make `byz` exactly the Byzantine replicas (at most f per shard).
    pub fn set_byzantine_replicas(&mut self, byz: &[(NodeId, ReplicaBehavior)]) -> Result<(), Error> {
        for s in 0..self.params.num_shards {
            if byz.iter().filter(|(r, _)| r.shard() == Some(s)).count() > self.params.f() {
                return Err(Error::Config(format!("more than f Byzantine replicas in shard {s}")));
            }
        }
        for slot in self.replicas.values_mut() {
            slot.byz = byz.iter().find(|(r, _)| *r == slot.replica.id).map(|(_, b)| *b);
        }
        self.board.borrow_mut().byz_replicas = byz.iter().map(|(r, _)| *r).collect();
        self.roster.byz_replicas = byz.iter().map(|(r, b)| (*r, b.name().to_string())).collect();
        Ok(())
    }

    /// Make `byz` exactly the Byzantine clients.
    pub fn set_byzantine_clients(&mut self, byz: &[u64]) {
        for (id, slot) in self.clients.iter_mut() {
            let keyring = self.board.borrow().keyring.clone();
            let source = Source::Generated(Generator::new(&self.cfg.workload, *id).expect("validated"));
            let mut c = Client::new(*id, self.cfg.client_config(), keyring, source, self.cfg.seed ^ id);
            if byz.contains(id) {
                c = c.with_byzantine(ByzClient {
                    behaviors: self.cfg.byz_client_behaviors.clone(),
                    prob: self.cfg.byz_client_prob,
                    board: self.board.clone(),
                });
            }
            slot.client = c;
        }
        let behaviors = self.cfg.byz_client_behaviors.iter().map(|b| b.name()).collect::<Vec<_>>().join(",");
        self.roster.byz_clients = byz.iter().map(|c| (*c, behaviors.clone())).collect();
    }

    fn push(&mut self, time: u64, ev: SimEvent) {
        self.seq += 1;
        self.queue.push(Item { time, seq: self.seq, ev });
    }

    fn delay(&mut self) -> Option<u64> {
        let d = &self.cfg.delay;
        let base = if d.min == d.max { d.min } else { self.net_rng.random_range(d.min..=d.max) };
        if self.now >= self.cfg.gst {
            return Some(base);
        }
        if d.pre_gst_drop > 0.0 && self.net_rng.random_bool(d.pre_gst_drop) {
            return None;
        }
        let extra = if d.pre_gst_mean == 0 {
            0
        } else {
            let e = Exp::new(1.0 / d.pre_gst_mean as f64).expect("positive rate");
            e.sample(&mut self.net_rng) as u64
        };
        Some((base + extra).min(self.end.saturating_sub(self.now)))
    }

    fn send(&mut self, from: NodeId, to: NodeId, msg: Message) {
        self.counters.count_message(msg.kind());
        let known = match to {
            NodeId::Client(c) => self.clients.contains_key(&c),
            r => self.replicas.contains_key(&r),
        };
        if !known {
            return;
        }
        match self.delay() {
            Some(d) => self.push(self.now + d, SimEvent::Deliver { from, to, msg }),
            None => self.counters.dropped += 1,
        }
    }

    fn absorb(&mut self, node: NodeId, ctx: Ctx) {
        let Ctx { sends, timers, events, .. } = ctx;
        let mut touched: Vec<(ShardId, Digest)> = Vec::new();
        for ev in events {
            if let Event::ViewChanged { replica, txn_id, .. } = &ev {
                touched.push((replica.shard().unwrap_or(0), *txn_id));
            }
            self.log.push(self.now, ev);
        }
        for (to, msg) in sends {
            self.send(node, to, msg);
        }
        for (delay, timer) in timers {
            self.push(self.now + delay, SimEvent::Timer { node, timer });
        }
        if self.cfg.observe_views {
            for (shard, txn) in touched {
                self.observe_views(shard, txn);
            }
        }
    }

    /// At least `2f + 1` correct replicas of a shard stay within one view of each other.
    fn observe_views(&mut self, shard: ShardId, txn: Digest) {
        let mut views: Vec<u64> = self
            .params
            .replicas(shard)
            .filter_map(|r| self.replicas.get(&r))
            .filter(|s| s.byz.is_none())
            .map(|s| s.replica.view_of(&txn))
            .collect();
        views.sort_unstable();
        let need = 2 * self.params.f() + 1;
        let ok = views.iter().any(|&v| views.iter().filter(|&&w| w >= v && w <= v + 1).count() >= need);
        if !ok {
            let what = format!("views of {} on shard {shard} spread out: {views:?}", txn.to_hex());
            self.log.push(self.now, Event::InvariantViolation { what });
        }
    }

    fn step_replica(&mut self, id: NodeId, input: Result<(NodeId, Message), Timer>) {
        let Some(slot) = self.replicas.get_mut(&id) else { return };
        let mut ctx = Ctx::new(self.now, self.now.saturating_add_signed(slot.skew));
        match input {
            Ok((from, msg)) => slot.replica.handle(from, msg, &mut ctx),
            Err(timer) => slot.replica.on_timer(timer, &mut ctx),
        }
        let board = self.board.borrow();
        if board.byz_replicas.contains(&id) {
            let sends = std::mem::take(&mut ctx.sends);
            ctx.sends = filter_replica_sends(slot.byz, &slot.replica, &board, sends);
        }
        drop(board);
        slot.replica.seal(&mut ctx);
        self.absorb(id, ctx);
    }

    fn step_client(&mut self, id: u64, input: Option<Result<(NodeId, Message), Timer>>) {
        let Some(slot) = self.clients.get_mut(&id) else { return };
        let mut ctx = Ctx::new(self.now, self.now.saturating_add_signed(slot.skew));
        match input {
            None => slot.client.start(&mut ctx),
            Some(Ok((from, msg))) => slot.client.handle(from, msg, &mut ctx),
            Some(Err(timer)) => slot.client.on_timer(timer, &mut ctx),
        }
        self.absorb(NodeId::Client(id), ctx);
    }

    /// Run to completion.
    pub fn run(mut self) -> Outcome {
        let ids: Vec<u64> = self.clients.keys().copied().collect();
        for c in ids {
            self.push(0, SimEvent::Start(c));
        }
        while let Some(item) = self.queue.pop() {
            if item.time > self.end {
                break;
            }
            self.now = item.time;
            self.counters.events += 1;
            match item.ev {
                SimEvent::Start(c) => self.step_client(c, None),
                SimEvent::Deliver { from, to, msg } => match to {
                    NodeId::Client(c) => self.step_client(c, Some(Ok((from, msg)))),
                    r => self.step_replica(r, Ok((from, msg))),
                },
                SimEvent::Timer { node, timer } => match node {
                    NodeId::Client(c) => self.step_client(c, Some(Err(timer))),
                    r => self.step_replica(r, Err(timer)),
                },
            }
        }
        for slot in self.replicas.values() {
            self.counters.signatures_made += slot.replica.signing_key().signatures_made();
            self.counters.signature_checks += slot.replica.verify_ctx().cache.signature_checks;
        }
        for slot in self.clients.values() {
            self.counters.signature_checks += slot.client.signature_checks();
        }
        let end_time = self.now;
        self.log.header = Some(Header {
            config: serde_json::to_value(&self.cfg).expect("config serializes"),
            roster: self.roster.clone(),
            end_time,
        });
        let metrics = Metrics::from_log(&self.log, &self.cfg, &self.counters);
        Outcome { log: self.log, metrics }
    }
}
