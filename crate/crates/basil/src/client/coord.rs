//! Driving a transaction from Stage 1 to a certificate, for the client's own
//! transactions and for the stalled transactions it recovers.

use super::*;

impl Client {
    fn new_coord(&mut self, meta: Arc<TxnMeta>, own: Option<OwnInfo>) -> Coord {
        let shards = meta.shards(self.cfg.params.num_shards);
        let log_shard = logging_shard(&meta, &shards).expect("transaction touches a shard");
        Coord {
            meta,
            own,
            phase: Phase::Stage1,
            gen: self.next_gen(),
            shards,
            log_shard,
            p1: BTreeMap::new(),
            conflict: None,
            blockers: BTreeMap::new(),
            fast_expired: false,
            p2r: BTreeMap::new(),
            stage2_sent: false,
            invoked: false,
            timed_out: false,
        }
    }

    fn arm_stage1(&self, id: Digest, gen: u64, ctx: &mut Ctx) {
        ctx.set_timer(self.cfg.tau_fast, Timer::FastWait { txn: id, gen });
        ctx.set_timer(self.cfg.tau_dep, Timer::DepStall { txn: id, gen });
        ctx.set_timer(self.cfg.stage_timeout, Timer::Retry { txn: id, gen });
    }

    /// End of execution: send Stage 1.
    pub(super) fn submit(&mut self, ctx: &mut Ctx) {
        let params = self.params();
        let e = self.exec.take().expect("executing");
        let meta = Arc::new(TxnMeta::new(e.ts, e.reads, e.writes.into_iter().collect::<Vec<_>>(), e.deps));
        if meta.shards(params.num_shards).is_empty() {
            self.schedule_next(0, ctx);
            return;
        }
        let id = meta.id();
        self.known.insert(id, meta.clone());
        let own = OwnInfo {
            script: e.script,
            attempt: e.attempt,
            first_begin: e.first_begin,
            stage1_at: ctx.now,
            behavior: e.behavior,
        };
        let coord = self.new_coord(meta.clone(), Some(own));
        ctx.log(Event::Stage1Sent { client: self.id, txn_id: id, ts: meta.ts, shards: coord.shards.clone() });
        ctx.log(Event::Interested { client: self.id, txn_id: id });
        for s in &coord.shards {
            ctx.broadcast(params.replicas(*s), &Message::P1 { meta: meta.clone() });
        }
        if e.behavior == Some(ClientBehavior::StallEarly) {
            self.schedule_next(self.cfg.tau_fast, ctx);
            return;
        }
        self.arm_stage1(id, coord.gen, ctx);
        self.coords.insert(id, coord);
    }

    pub(super) fn schedule_next(&mut self, delay: u64, ctx: &mut Ctx) {
        self.loop_seq += 1;
        ctx.set_timer(delay, Timer::NextTxn { seq: self.loop_seq });
    }

    /// Start finishing someone else's transaction.
    pub fn recover(&mut self, meta: Arc<TxnMeta>, ctx: &mut Ctx) {
        let id = meta.id();
        if self.accepted.contains_key(&id) || self.coords.contains_key(&id) || meta.is_genesis() {
            return;
        }
        self.known.insert(id, meta.clone());
        let coord = self.new_coord(meta.clone(), None);
        ctx.log(Event::RecoveryStarted { client: self.id, txn_id: id });
        ctx.log(Event::Interested { client: self.id, txn_id: id });
        ctx.log(Event::RpSent { client: self.id, txn_id: id });
        for s in &coord.shards {
            ctx.broadcast(self.cfg.params.replicas(*s), &Message::Rp { meta: meta.clone() });
        }
        self.arm_stage1(id, coord.gen, ctx);
        self.coords.insert(id, coord);
    }

    // ---- replies ----

    pub(super) fn on_p1_reply(&mut self, from: NodeId, r: P1Reply, ctx: &mut Ctx) {
        let id = r.p1r.body.txn_id;
        if self.absorb_p1(from, r, ctx) {
            self.progress(id, ctx);
        }
    }

    fn absorb_p1(&mut self, from: NodeId, r: P1Reply, ctx: &mut Ctx) -> bool {
        let id = r.p1r.body.txn_id;
        let Some(c) = self.coords.get(&id) else { return false };
        let Some(shard) = from.shard().filter(|s| c.shards.contains(s)) else { return false };
        if r.p1r.body.replica != from || c.p1.get(&shard).is_some_and(|m| m.contains_key(&from)) {
            return false;
        }
        if !self.params().is_replica_of(from, shard) {
            return false;
        }
        let meta = c.meta.clone();
        if !r.p1r.verify(&mut self.verify) {
            ctx.log(Event::Misbehavior { observer: self.me, suspect: from, what: "bad P1R signature".into() });
            return false;
        }
        let conflict = match r.conflict {
            Some(k) if r.p1r.body.vote == Decision::Abort => {
                let ok = k.cert.decision == Decision::Commit
                    && !conflict_keys(&meta, &k.meta).is_empty()
                    && self.cert_valid(&k);
                ok.then_some(k)
            }
            _ => None,
        };
        let c = self.coords.get_mut(&id).unwrap();
        if c.conflict.is_none() {
            c.conflict = conflict;
        }
        if let Some(b) = r.blocker.filter(|b| r.p1r.body.vote == Decision::Abort && b.id() != id) {
            c.blockers.entry(b.id()).or_insert_with(|| (b, BTreeSet::new())).1.insert(from);
        }
        c.p1.entry(shard).or_default().insert(from, r.p1r);
        true
    }

    pub(super) fn on_p2_reply(&mut self, from: NodeId, r: Signed<P2rBody>, ctx: &mut Ctx) {
        let id = r.body.txn_id;
        if self.absorb_p2r(from, r, ctx) {
            self.progress(id, ctx);
        }
    }

    fn absorb_p2r(&mut self, from: NodeId, r: Signed<P2rBody>, ctx: &mut Ctx) -> bool {
        let id = r.body.txn_id;
        let Some(c) = self.coords.get(&id) else { return false };
        if r.body.replica != from || !self.params().is_replica_of(from, c.log_shard) {
            return false;
        }
        let rank = |b: &P2rBody| (b.view_current, b.view_decision, b.decision.is_some());
        if c.p2r.get(&from).is_some_and(|old| rank(&old.body) > rank(&r.body) || old.body == r.body) {
            return false;
        }
        if !r.verify(&mut self.verify) {
            ctx.log(Event::Misbehavior { observer: self.me, suspect: from, what: "bad P2R signature".into() });
            return false;
        }
        self.coords.get_mut(&id).unwrap().p2r.insert(from, r);
        true
    }

    pub(super) fn on_recovery_reply(&mut self, from: NodeId, rr: RecoveryReply, ctx: &mut Ctx) {
        let id = rr.txn_id;
        let Some(c) = self.coords.get(&id) else { return };
        let recovering = c.own.is_none();
        let dep_ids: BTreeSet<Digest> = c.meta.dep_set.iter().map(|(_, d)| *d).collect();
        if let Some(cert) = rr.cert {
            if cert.id() == id && self.cert_valid(&cert) {
                self.finish(id, cert.cert.clone(), ctx);
            }
            return;
        }
        let mut changed = false;
        if let Some(p1) = rr.p1 {
            changed |= p1.p1r.body.txn_id == id && self.absorb_p1(from, p1, ctx);
        }
        if let Some(p2r) = rr.p2r {
            changed |= p2r.body.txn_id == id && self.absorb_p2r(from, p2r, ctx);
        }
        for m in rr.pending_deps {
            let d = m.id();
            if dep_ids.contains(&d) && !self.accepted.contains_key(&d) {
                self.known.entry(d).or_insert_with(|| m.clone());
                if recovering {
                    self.recover(m, ctx);
                }
            }
        }
        if changed {
            self.progress(id, ctx);
        }
    }

    // ---- decisions ----

    fn slow_cert(&self, c: &Coord) -> Option<DecisionCert> {
        let mut groups: BTreeMap<(Decision, View), Vec<Signed<P2rBody>>> = BTreeMap::new();
        for r in c.p2r.values() {
            if let Some(d) = r.body.decision {
                groups.entry((d, r.body.view_decision)).or_default().push(r.clone());
            }
        }
        groups.into_iter().find(|(_, v)| v.len() >= self.params().log_quorum()).map(|((decision, _), replies)| {
            DecisionCert {
                txn_id: c.meta.id(),
                decision,
                evidence: CertEvidence::Slow { shard: c.log_shard, replies },
            }
        })
    }

    fn bundles(&self, c: &Coord) -> BTreeMap<ShardId, VoteBundle> {
        let id = c.meta.id();
        let mut out = BTreeMap::new();
        for s in &c.shards {
            let replies: Vec<_> = c.p1.get(s).map(|m| m.values().cloned().collect()).unwrap_or_default();
            let conflict = c.conflict.clone().filter(|_| {
                c.p1.get(s).is_some_and(|m| m.values().any(|v| v.body.vote == Decision::Abort))
                    && self.conflict_on_shard(c, *s)
            });
            if let Ok(Classification::Bundle(b)) = classify_votes(self.params(), id, *s, &replies, conflict) {
                out.insert(*s, b);
            }
        }
        out
    }

    fn conflict_on_shard(&self, c: &Coord, s: ShardId) -> bool {
        let Some(k) = &c.conflict else { return false };
        conflict_keys(&c.meta, &k.meta).iter().any(|key| shard_of(*key, self.params().num_shards) == s)
    }

    pub(super) fn progress(&mut self, id: Digest, ctx: &mut Ctx) {
        let params = self.params();
        let Some(c) = self.coords.get(&id) else { return };
        if let Some(cert) = self.slow_cert(c) {
            self.finish(id, cert, ctx);
            return;
        }
        let equivocating = matches!(
            c.own.as_ref().and_then(|o| o.behavior),
            Some(ClientBehavior::EquivReal | ClientBehavior::EquivForced)
        );
        let bundles = self.bundles(c);
        if !equivocating {
            if let Some(b) = bundles.values().find(|b| b.is_fast() && b.decision == Decision::Abort) {
                let cert = DecisionCert {
                    txn_id: id,
                    decision: Decision::Abort,
                    evidence: CertEvidence::Fast { bundles: vec![b.clone()] },
                };
                self.finish(id, cert, ctx);
                return;
            }
            let all_fast = bundles.len() == c.shards.len()
                && bundles.values().all(|b| b.is_fast() && b.decision == Decision::Commit);
            if all_fast {
                let cert = DecisionCert {
                    txn_id: id,
                    decision: Decision::Commit,
                    evidence: CertEvidence::Fast { bundles: bundles.into_values().collect() },
                };
                self.finish(id, cert, ctx);
                return;
            }
        }
        match c.phase {
            Phase::Stage1 => {
                let all_in = c.shards.iter().all(|s| c.p1.get(s).map_or(0, |m| m.len()) >= params.n());
                if !(c.fast_expired || all_in) {
                    return;
                }
                let (decision, tallies) =
                    if let Some(b) = bundles.values().find(|b| b.decision == Decision::Abort) {
                        (Decision::Abort, vec![b.clone()])
                    } else if bundles.len() == c.shards.len() {
                        (Decision::Commit, bundles.values().cloned().collect())
                    } else {
                        return;
                    };
                if equivocating && self.try_equivocate(id, ctx) {
                    return;
                }
                let c = self.coords.get(&id).unwrap();
                if c.p2r.values().any(|r| r.body.view_current > 0) {
                    self.enter_fallback(id, ctx);
                } else {
                    self.send_p2(id, decision, tallies, ctx);
                }
            }
            Phase::Stage2 => {
                // Divergent once the logged replies can no longer reach n - f matching.
                let mut groups: BTreeMap<(Decision, View), usize> = BTreeMap::new();
                for r in c.p2r.values() {
                    if let Some(d) = r.body.decision {
                        *groups.entry((d, r.body.view_decision)).or_default() += 1;
                    }
                }
                let logged: usize = groups.values().sum();
                let best = groups.values().copied().max().unwrap_or(0);
                if best + (params.n() - logged) < params.log_quorum() {
                    self.enter_fallback(id, ctx);
                }
            }
            Phase::Fallback => {
                if !c.invoked {
                    self.fallback_step(id, ctx);
                }
            }
        }
    }

    fn send_p2(&mut self, id: Digest, decision: Decision, tallies: Vec<VoteBundle>, ctx: &mut Ctx) {
        let gen = self.next_gen();
        let params = self.params();
        let c = self.coords.get_mut(&id).unwrap();
        c.phase = Phase::Stage2;
        c.gen = gen;
        c.stage2_sent = true;
        let msg = Message::P2 { meta: c.meta.clone(), decision, tallies, view: 0 };
        ctx.broadcast(params.replicas(c.log_shard), &msg);
        ctx.log(Event::Stage2Sent { client: self.id, txn_id: id, decision, equivocated: false });
        ctx.set_timer(self.cfg.stage_timeout, Timer::Retry { txn: id, gen });
    }

    fn fallback_delay(&self, c: &Coord) -> u64 {
        let v = c.p2r.values().map(|r| r.body.view_current).max().unwrap_or(0);
        view_timeout(self.cfg.view_timeout_base, v + 1) + self.cfg.stage_timeout
    }

    fn enter_fallback(&mut self, id: Digest, ctx: &mut Ctx) {
        let gen = self.next_gen();
        let c = self.coords.get_mut(&id).unwrap();
        c.phase = Phase::Fallback;
        c.gen = gen;
        c.invoked = false;
        c.timed_out = false;
        self.fallback_step(id, ctx);
        let c = &self.coords[&id];
        ctx.set_timer(self.fallback_delay(c), Timer::Retry { txn: id, gen });
    }

    fn fallback_step(&mut self, id: Digest, ctx: &mut Ctx) {
        let params = self.params();
        let c = self.coords.get_mut(&id).unwrap();
        let reports: Vec<&Signed<P2rBody>> = c.p2r.values().collect();
        let views: Vec<View> = reports.iter().map(|r| r.body.view_current).collect();
        if let Reconcile::Invoke(ix) = reconcile_views(&views, self.cfg.view_strategy, params, c.timed_out) {
            let payload: Vec<Signed<P2rBody>> = ix.iter().map(|&i| reports[i].clone()).collect();
            let sent: Vec<View> = payload.iter().map(|r| r.body.view_current).collect();
            let msg = Message::InvokeFb { meta: c.meta.clone(), views: payload };
            ctx.broadcast(params.replicas(c.log_shard), &msg);
            c.invoked = true;
            ctx.log(Event::FallbackInvoked { client: self.id, txn_id: id, views: sent });
        }
    }

    pub(super) fn on_retry(&mut self, id: Digest, gen: u64, ctx: &mut Ctx) {
        let params = self.params();
        let Some(c) = self.coords.get_mut(&id).filter(|c| c.gen == gen) else { return };
        match c.phase {
            Phase::Stage1 => {
                let msg = match c.own {
                    Some(_) => Message::P1 { meta: c.meta.clone() },
                    None => Message::Rp { meta: c.meta.clone() },
                };
                for s in &c.shards {
                    let have = c.p1.get(s);
                    for r in params.replicas(*s) {
                        if !have.is_some_and(|m| m.contains_key(&r)) {
                            ctx.send(r, msg.clone());
                        }
                    }
                }
                if c.own.is_none() {
                    ctx.log(Event::RpSent { client: self.id, txn_id: id });
                }
                ctx.set_timer(self.cfg.stage_timeout, Timer::Retry { txn: id, gen });
            }
            Phase::Stage2 if c.p2r.len() < params.log_quorum() => {
                // Ask again; a replica repeats its current state.
                for r in params.replicas(c.log_shard) {
                    if !c.p2r.contains_key(&r) {
                        ctx.send(r, Message::Rp { meta: c.meta.clone() });
                    }
                }
                ctx.set_timer(self.cfg.stage_timeout, Timer::Retry { txn: id, gen });
            }
            Phase::Stage2 => self.enter_fallback(id, ctx),
            Phase::Fallback => {
                c.timed_out = true;
                c.invoked = false;
                for r in params.replicas(c.log_shard) {
                    if !c.p2r.contains_key(&r) {
                        ctx.send(r, Message::Rp { meta: c.meta.clone() });
                    }
                }
                self.fallback_step(id, ctx);
                let c = &self.coords[&id];
                ctx.set_timer(self.fallback_delay(c), Timer::Retry { txn: id, gen });
            }
        }
    }

    fn finish(&mut self, id: Digest, cert: DecisionCert, ctx: &mut Ctx) {
        let params = self.params();
        let Some(c) = self.coords.remove(&id) else { return };
        let decision = cert.decision;
        let fast = cert.is_fast() && !c.stage2_sent;
        let txn = Arc::new(CertifiedTxn { meta: c.meta.clone(), cert });
        self.valid.insert((id, decision));
        self.accepted.insert(id, txn.clone());
        ctx.log(Event::Certificate { txn: txn.clone() });
        ctx.log(Event::CertAccepted { node: self.me, txn_id: id, decision });
        let stalling = c.own.as_ref().is_some_and(|o| o.behavior.is_some());
        if !stalling {
            for s in &c.shards {
                ctx.broadcast(params.replicas(*s), &Message::Writeback(txn.clone()));
            }
        }
        let Some(own) = c.own else { return };
        if decision == Decision::Abort {
            // At least one correct replica of some shard must vouch for a blocker.
            for (bid, (meta, voters)) in c.blockers {
                let vouched = c.shards.iter().any(|s| voters.iter().filter(|v| v.shard() == Some(*s)).count() > params.f());
                if vouched && !self.accepted.contains_key(&bid) {
                    self.known.entry(bid).or_insert(meta);
                    ctx.set_timer(self.cfg.tau_dep, Timer::Blocker { txn: bid });
                }
            }
        }
        ctx.log(Event::DecisionReported {
            client: self.id,
            txn_id: id,
            ts: c.meta.ts,
            decision,
            fast,
            latency: ctx.now - own.first_begin,
            prepare_latency: ctx.now - own.stage1_at,
        });
        match decision {
            Decision::Commit => self.schedule_next(0, ctx),
            Decision::Abort => self.after_abort(own.script, own.attempt, own.first_begin, ctx),
        }
    }

    // ---- equivocation ----

    /// Send conflicting Stage-2 decisions to the two halves of the logging
    /// shard if the adversary can justify both. Returns false after
    /// degrading the transaction to a plain stall.
    fn try_equivocate(&mut self, id: Digest, ctx: &mut Ctx) -> bool {
        let c = &self.coords[&id];
        let behavior = c.own.as_ref().and_then(|o| o.behavior);
        let board = self.byz.as_ref().map(|b| b.board.clone());
        let forced = behavior == Some(ClientBehavior::EquivForced) && board.is_some();
        let tallies = if forced { self.forced_tallies(c) } else { Self::real_tallies(c, self.params()) };
        let Some((commit, abort)) = tallies else {
            let c = self.coords.get_mut(&id).unwrap();
            c.own.as_mut().unwrap().behavior = Some(ClientBehavior::StallLate);
            return false;
        };
        if forced {
            board.unwrap().borrow_mut().forced.insert(id, self.id);
        }
        let params = self.params();
        let meta = c.meta.clone();
        let half = params.n() as u32 / 2;
        for r in params.replicas(c.log_shard) {
            let (decision, tallies) = if r.replica_index().unwrap() < half {
                (Decision::Commit, commit.clone())
            } else {
                (Decision::Abort, vec![abort.clone()])
            };
            ctx.send(r, Message::P2 { meta: meta.clone(), decision, tallies, view: 0 });
        }
        ctx.log(Event::Stage2Sent { client: self.id, txn_id: id, decision: Decision::Commit, equivocated: true });
        self.coords.remove(&id);
        self.schedule_next(0, ctx);
        true
    }

    fn slow_bundle(id: Digest, shard: ShardId, decision: Decision, votes: Vec<Signed<P1rBody>>) -> VoteBundle {
        VoteBundle { txn_id: id, shard, decision, kind: BundleKind::SlowTally, votes, conflict: None }
    }

    /// Commit tallies for every shard and an abort tally, from real votes only.
    fn real_tallies(c: &Coord, params: Params) -> Option<(Vec<VoteBundle>, VoteBundle)> {
        let id = c.meta.id();
        let of = |s: ShardId, d: Decision| -> Vec<Signed<P1rBody>> {
            c.p1.get(&s).map(|m| m.values().filter(|v| v.body.vote == d).cloned().collect()).unwrap_or_default()
        };
        let mut commit = Vec::new();
        for s in &c.shards {
            let mut v = of(*s, Decision::Commit);
            if v.len() < params.commit_quorum() {
                return None;
            }
            v.truncate(params.commit_quorum());
            commit.push(Self::slow_bundle(id, *s, Decision::Commit, v));
        }
        let abort = c.shards.iter().find_map(|s| {
            let mut v = of(*s, Decision::Abort);
            (v.len() >= params.abort_quorum()).then(|| {
                v.truncate(params.abort_quorum());
                Self::slow_bundle(id, *s, Decision::Abort, v)
            })
        })?;
        Some((commit, abort))
    }

    /// Tallies from correct replicas' real votes plus whatever the shard's
    /// Byzantine replicas are willing to sign.
    fn forced_tallies(&self, c: &Coord) -> Option<(Vec<VoteBundle>, VoteBundle)> {
        let params = self.params();
        let id = c.meta.id();
        let board = self.byz.as_ref()?.board.borrow();
        let tally = |s: ShardId, d: Decision, need: usize| -> Option<Vec<Signed<P1rBody>>> {
            let byz = board.byz_in_shard(s);
            let mut v: Vec<_> = c
                .p1
                .get(&s)
                .map(|m| m.values().filter(|x| x.body.vote == d && !byz.contains(&x.body.replica)).cloned().collect())
                .unwrap_or_default();
            v.extend(byz.iter().filter_map(|r| board.forge_p1r(id, *r, d)));
            (v.len() >= need).then(|| {
                v.truncate(need);
                v
            })
        };
        let mut commit = Vec::new();
        for s in &c.shards {
            let v = tally(*s, Decision::Commit, params.commit_quorum())?;
            commit.push(Self::slow_bundle(id, *s, Decision::Commit, v));
        }
        let abort = c.shards.iter().find_map(|s| {
            tally(*s, Decision::Abort, params.abort_quorum()).map(|v| Self::slow_bundle(id, *s, Decision::Abort, v))
        })?;
        Some((commit, abort))
    }
}
