//! The message-passing commit protocol with per-shard reconfiguration.
//!
//! Each process is a deterministic state machine: a transition takes the
//! current state plus one input (a delivered message or a local command) and
//! returns the effects to perform. Guards that are false but may become true
//! later yield [`Handled::Defer`]; guards over monotone variables that are
//! already false forever yield [`Handled::Drop`].
//!
//! The same machine runs the naive RDMA variant when built with
//! [`Persistence::Rdma`]: ACCEPT and DECISION then travel as one-sided writes,
//! followers apply them unconditionally, and NIC acknowledgements replace
//! ACCEPT_ACK. Reconfiguration stays per shard, which is exactly what makes
//! that variant unsafe.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::certification::{project, Decision, Payload};
use crate::config_service::ShardConfig;
use crate::ids::{Epoch, NodeId, Pid, ShardId, Slot, TxnId};
use crate::message::{log_length, CsConfig, CsKey, Log, LogEntry, Message, Phase};
use crate::process::{compute_membership, compute_vote, CoordTxn, Ctx, Effect, Handled, Status};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Persistence {
    Messages,
    Rdma,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum CommandError {
    #[error("a reconfiguration is already in progress")]
    AlreadyProbing,
    #[error("slot {0} is not prepared")]
    NotPrepared(Slot),
    #[error("transaction {0} touches no shard")]
    NoShards(TxnId),
}

/// A pending request to the configuration service.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
enum CsWait {
    GetLast,
    Descend,
    Cas { members: BTreeSet<Pid>, leader: Pid },
}

/// Per-process view of state that checkers inspect.
#[serde_with::serde_as]
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Snapshot {
    pub shard: ShardId,
    pub status: Status,
    /// Own-shard epoch (`epoch[s0]`, or the single epoch of the global variant).
    pub epoch: Epoch,
    pub new_epoch: Epoch,
    pub initialized: bool,
    pub members: BTreeSet<Pid>,
    pub leader: Option<Pid>,
    #[serde_as(as = "BTreeMap<serde_with::DisplayFromStr, _>")]
    pub log: Log,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MpProcess {
    pub pid: Pid,
    pub shard: ShardId,
    pub persistence: Persistence,
    pub epoch: BTreeMap<ShardId, Epoch>,
    pub members: BTreeMap<ShardId, BTreeSet<Pid>>,
    pub leader: BTreeMap<ShardId, Pid>,
    pub status: Status,
    pub log: Log,
    pub next: Slot,
    pub new_epoch: Epoch,
    pub initialized: bool,
    pub probing: bool,
    pub probed_epoch: Epoch,
    pub probed_members: BTreeSet<Pid>,
    pub recon_epoch: Epoch,
    pub recon_shard: Option<ShardId>,
    responders: BTreeSet<Pid>,
    used: BTreeSet<Pid>,
    cs_wait: Option<(u64, CsWait)>,
    next_req: u64,
    pub coord: BTreeMap<TxnId, CoordTxn>,
}

impl MpProcess {
    /// A process that knows the bootstrap configuration of every shard. It is
    /// an initialized member iff it appears in its own shard's configuration.
    pub fn new(pid: Pid, shard: ShardId, boot: &BTreeMap<ShardId, ShardConfig>, persistence: Persistence) -> MpProcess {
        let own = &boot[&shard];
        let member = own.members.contains(&pid);
        let status = if own.leader == pid { Status::Leader } else { Status::Follower };
        MpProcess {
            pid,
            shard,
            persistence,
            epoch: boot.iter().map(|(s, c)| (*s, if *s == shard && !member { 0 } else { c.epoch })).collect(),
            members: boot.iter().map(|(s, c)| (*s, c.members.clone())).collect(),
            leader: boot.iter().map(|(s, c)| (*s, c.leader)).collect(),
            status,
            log: Log::new(),
            next: 0,
            new_epoch: if member { own.epoch } else { 0 },
            initialized: member,
            probing: false,
            probed_epoch: 0,
            probed_members: BTreeSet::new(),
            recon_epoch: 0,
            recon_shard: None,
            responders: BTreeSet::new(),
            used: BTreeSet::new(),
            cs_wait: None,
            next_req: 0,
            coord: BTreeMap::new(),
        }
    }

    pub fn snapshot(&self) -> Snapshot {
        Snapshot {
            shard: self.shard,
            status: self.status,
            epoch: self.epoch.get(&self.shard).copied().unwrap_or(0),
            new_epoch: self.new_epoch,
            initialized: self.initialized,
            members: self.members.get(&self.shard).cloned().unwrap_or_default(),
            leader: self.leader.get(&self.shard).copied(),
            log: self.log.clone(),
        }
    }

    fn epoch_of(&self, s: ShardId) -> Epoch {
        self.epoch.get(&s).copied().unwrap_or(0)
    }

    fn followers_of(&self, s: ShardId) -> BTreeSet<Pid> {
        let mut f = self.members.get(&s).cloned().unwrap_or_default();
        if let Some(l) = self.leader.get(&s) {
            f.remove(l);
        }
        f
    }

    fn persist(&self, to: Pid, msg: Message) -> Effect {
        match self.persistence {
            Persistence::Messages => Effect::send(to, msg),
            Persistence::Rdma => Effect::SendRdma { to, msg },
        }
    }

    fn fresh_req(&mut self) -> u64 {
        self.next_req += 1;
        self.next_req
    }

    // ---- local commands ------------------------------------------------

    /// PREPARE(t, l|s) to the leader of every shard `t` touches.
    pub fn certify(&mut self, t: TxnId, l: &Payload, ctx: &Ctx) -> Result<Vec<Effect>, CommandError> {
        let shards = ctx.registry.shards(t);
        if shards.is_empty() {
            return Err(CommandError::NoShards(t));
        }
        self.coord.entry(t).or_default();
        Ok(shards
            .iter()
            .map(|s| Effect::send(self.leader[s], Message::Prepare { t, payload: Some(project(l, *s, ctx.map)) }))
            .collect())
    }

    /// Become an extra coordinator for the transaction at slot `k`.
    pub fn retry(&mut self, k: Slot, ctx: &Ctx) -> Result<Vec<Effect>, CommandError> {
        let entry = self.log.get(&k).filter(|e| e.phase == Phase::Prepared).ok_or(CommandError::NotPrepared(k))?;
        let t = entry.txn;
        self.coord.entry(t).or_default();
        Ok(ctx
            .registry
            .shards(t)
            .iter()
            .map(|s| Effect::send(self.leader[s], Message::Prepare { t, payload: None }))
            .collect())
    }

    pub fn reconfigure(&mut self, s: ShardId) -> Result<Vec<Effect>, CommandError> {
        if self.probing {
            return Err(CommandError::AlreadyProbing);
        }
        self.probing = true;
        self.recon_shard = Some(s);
        self.responders.clear();
        let req = self.fresh_req();
        self.cs_wait = Some((req, CsWait::GetLast));
        Ok(vec![Effect::send(NodeId::Cs, Message::CsGetLast { req, key: CsKey::Shard(s) })])
    }

    // ---- message handling ---------------------------------------------

    pub fn handle(&mut self, from: NodeId, msg: &Message, ctx: &Ctx) -> Handled {
        match msg {
            Message::Prepare { t, payload } => self.on_prepare(from, *t, payload.as_ref(), ctx),
            Message::PrepareAck { e, s, k, t, payload, vote, vote_epoch } => {
                self.on_prepare_ack(*e, *s, *k, *t, payload, *vote, *vote_epoch, ctx)
            }
            Message::Accept { e, k, t, payload, vote, vote_epoch } => {
                self.on_accept(from, *e, *k, *t, payload, *vote, *vote_epoch)
            }
            Message::AcceptAck { s, e, k, t, vote } => match from.pid() {
                Some(p) => self.on_accept_ack(p, *s, *e, *k, *t, *vote, ctx),
                None => Handled::Drop,
            },
            Message::Decision { e, k, d } => self.on_decision(*e, *k, *d),
            Message::Probe { e } => self.on_probe(from, *e),
            Message::ProbeAck { initialized, e, s } => match from.pid() {
                Some(p) => self.on_probe_ack(p, *initialized, *e, *s, ctx),
                None => Handled::Drop,
            },
            Message::NewConfig { e, members } => self.on_new_config(*e, members),
            Message::NewState { e, members, log } => match from.pid() {
                Some(p) => self.on_new_state(p, *e, members, log),
                None => Handled::Drop,
            },
            Message::ConfigChange { s, e, members, leader } => self.on_config_change(*s, *e, members, *leader, ctx),
            Message::CsReply { req, cfg, used } => self.on_cs_reply(*req, cfg.as_ref(), used),
            Message::CsCasReply { req, ok } => self.on_cs_cas_reply(*req, *ok),
            _ => Handled::Drop,
        }
    }

    fn on_prepare(&mut self, from: NodeId, t: TxnId, l: Option<&Payload>, ctx: &Ctx) -> Handled {
        if self.status != Status::Leader {
            return Handled::Defer;
        }
        let s0 = self.shard;
        let e = self.epoch_of(s0);
        if let Some((k, entry)) = self.log.iter().find(|(_, en)| en.txn == t) {
            let ack = Message::PrepareAck {
                e,
                s: s0,
                k: *k,
                t,
                payload: entry.payload.clone(),
                vote: entry.vote,
                vote_epoch: entry.vote_epoch,
            };
            return Handled::Done(vec![Effect::send(from, ack)]);
        }
        self.next += 1;
        let k = self.next;
        let (entry, record) = compute_vote(&self.log, k, s0, e, t, l, ctx);
        let ack =
            Message::PrepareAck { e, s: s0, k, t, payload: entry.payload.clone(), vote: entry.vote, vote_epoch: e };
        self.log.insert(k, entry);
        Handled::Done(vec![Effect::Vote(record), Effect::send(from, ack)])
    }

    #[allow(clippy::too_many_arguments)]
    fn on_prepare_ack(
        &mut self,
        e: Epoch,
        s: ShardId,
        k: Slot,
        t: TxnId,
        l: &Payload,
        d: Decision,
        vote_epoch: Epoch,
        ctx: &Ctx,
    ) -> Handled {
        let cur = self.epoch_of(s);
        if cur > e {
            return Handled::Drop;
        }
        if cur < e {
            return Handled::Defer;
        }
        let followers = self.followers_of(s);
        let pr = self.coord.entry(t).or_default().progress.entry((s, e)).or_default();
        pr.prepared = Some((k, d));
        pr.targets.extend(followers.iter().copied());
        let mut out: Vec<Effect> = followers
            .iter()
            .map(|f| self.persist(*f, Message::Accept { e, k, t, payload: l.clone(), vote: d, vote_epoch }))
            .collect();
        out.extend(self.try_decide(t, ctx));
        Handled::Done(out)
    }

    #[allow(clippy::too_many_arguments)]
    fn on_accept(
        &mut self,
        from: NodeId,
        e: Epoch,
        k: Slot,
        t: TxnId,
        l: &Payload,
        d: Decision,
        vote_epoch: Epoch,
    ) -> Handled {
        let cur = self.epoch_of(self.shard);
        if cur > e {
            return Handled::Drop;
        }
        if self.status != Status::Follower || cur < e {
            return Handled::Defer;
        }
        self.log.entry(k).or_insert_with(|| LogEntry {
            txn: t,
            payload: l.clone(),
            vote: d,
            dec: None,
            phase: Phase::Prepared,
            vote_epoch,
        });
        Handled::Done(vec![Effect::send(from, Message::AcceptAck { s: self.shard, e, k, t, vote: d })])
    }

    #[allow(clippy::too_many_arguments)]
    fn on_accept_ack(&mut self, from: Pid, s: ShardId, e: Epoch, k: Slot, t: TxnId, d: Decision, ctx: &Ctx) -> Handled {
        self.coord.entry(t).or_default().progress.entry((s, e)).or_default().acks.insert(from, (k, d));
        Handled::Done(self.try_decide(t, ctx))
    }

    /// NIC acknowledgement of an ACCEPT written into `to`'s memory.
    pub fn on_rdma_ack(&mut self, to: Pid, msg: &Message, ctx: &Ctx) -> Vec<Effect> {
        let Message::Accept { e, k, t, vote, .. } = msg else { return Vec::new() };
        let Some(c) = self.coord.get_mut(t) else { return Vec::new() };
        let Some(pr) =
            c.progress.iter_mut().find(|((_, pe), pr)| pe == e && pr.targets.contains(&to)).map(|(_, pr)| pr)
        else {
            return Vec::new();
        };
        pr.acks.insert(to, (*k, *vote));
        self.try_decide(*t, ctx)
    }

    /// Delivery of a one-sided write. Followers cannot refuse these.
    pub fn on_rdma_deliver(&mut self, msg: &Message) -> Vec<Effect> {
        match msg {
            Message::Accept { k, t, payload, vote, vote_epoch, .. } => {
                self.log.insert(
                    *k,
                    LogEntry {
                        txn: *t,
                        payload: payload.clone(),
                        vote: *vote,
                        dec: None,
                        phase: Phase::Prepared,
                        vote_epoch: *vote_epoch,
                    },
                );
            }
            Message::Decision { k, d, .. } => {
                if let Some(en) = self.log.get_mut(k) {
                    en.dec = Some(*d);
                    en.phase = Phase::Decided;
                }
            }
            _ => {}
        }
        Vec::new()
    }

    /// Fires the commit decision once every shard of `t` is fully acked at
    /// this coordinator's current view of its epoch.
    fn try_decide(&mut self, t: TxnId, ctx: &Ctx) -> Vec<Effect> {
        let shards = ctx.registry.shards(t);
        let Some(c) = self.coord.get(&t) else { return Vec::new() };
        if c.decided.is_some() || shards.is_empty() {
            return Vec::new();
        }
        let mut ready = Vec::new();
        for s in &shards {
            match c.shard_ready(*s, self.epoch_of(*s), &self.followers_of(*s)) {
                Some(kd) => ready.push((*s, kd)),
                None => return Vec::new(),
            }
        }
        let d = Decision::meet_all(ready.iter().map(|(_, (_, d))| *d));
        self.coord.get_mut(&t).expect("present").decided = Some(d);
        let mut out = Vec::new();
        if let Some(info) = ctx.registry.get(t) {
            out.push(Effect::send(info.client, Message::DecisionClient { t, d }));
        }
        for (s, (k, _)) in ready {
            let e = self.epoch_of(s);
            for m in self.members.get(&s).cloned().unwrap_or_default() {
                out.push(self.persist(m, Message::Decision { e, k, d }));
            }
        }
        out
    }

    fn on_decision(&mut self, e: Epoch, k: Slot, d: Decision) -> Handled {
        if self.status == Status::Reconfiguring || self.epoch_of(self.shard) < e {
            return Handled::Defer;
        }
        // A slot that is still a hole has nothing to decide; the protocol
        // guarantees this does not happen for fully acked transactions.
        if let Some(en) = self.log.get_mut(&k) {
            en.dec = Some(d);
            en.phase = Phase::Decided;
        }
        Handled::Done(Vec::new())
    }

    fn on_probe(&mut self, from: NodeId, e: Epoch) -> Handled {
        if e < self.new_epoch {
            return Handled::Drop;
        }
        self.status = Status::Reconfiguring;
        self.new_epoch = e;
        Handled::Done(vec![Effect::send(from, Message::ProbeAck { initialized: self.initialized, e, s: self.shard })])
    }

    fn on_probe_ack(&mut self, from: Pid, initialized: bool, e: Epoch, s: ShardId, ctx: &Ctx) -> Handled {
        if !self.probing || e != self.recon_epoch || Some(s) != self.recon_shard {
            return Handled::Drop;
        }
        if matches!(self.cs_wait, Some((_, CsWait::GetLast | CsWait::Descend))) {
            return Handled::Defer;
        }
        self.responders.insert(from);
        if initialized {
            self.probing = false;
            let pool: BTreeSet<Pid> =
                ctx.spares.get(&s).into_iter().flatten().copied().filter(|p| !self.used.contains(p)).collect();
            return match compute_membership(&self.responders, from, &pool, ctx.replicas) {
                Ok(members) => {
                    let req = self.fresh_req();
                    let cfg = ShardConfig { epoch: self.recon_epoch, members: members.clone(), leader: from };
                    self.cs_wait = Some((req, CsWait::Cas { members, leader: from }));
                    Handled::Done(vec![Effect::send(
                        NodeId::Cs,
                        Message::CsCas {
                            req,
                            key: CsKey::Shard(s),
                            expected: self.recon_epoch - 1,
                            cfg: CsConfig::Shard(cfg),
                        },
                    )])
                }
                Err(err) => Handled::Done(vec![Effect::ReconfigAbandoned { reason: err.to_string() }]),
            };
        }
        // Descend only on a false ack from the epoch being probed; the
        // bootstrap epoch has no uninitialized members to justify it.
        if !self.probed_members.contains(&from) || self.probed_epoch <= 1 {
            return Handled::Done(Vec::new());
        }
        self.probed_epoch -= 1;
        let req = self.fresh_req();
        self.cs_wait = Some((req, CsWait::Descend));
        Handled::Done(vec![Effect::send(
            NodeId::Cs,
            Message::CsGet { req, key: CsKey::Shard(s), e: self.probed_epoch },
        )])
    }

    fn on_cs_reply(&mut self, req: u64, cfg: Option<&CsConfig>, used: &BTreeSet<Pid>) -> Handled {
        let Some((want, wait)) = self.cs_wait.clone() else { return Handled::Drop };
        if want != req {
            return Handled::Drop;
        }
        self.cs_wait = None;
        let Some(CsConfig::Shard(cfg)) = cfg else {
            self.probing = false;
            return Handled::Done(vec![Effect::ReconfigAbandoned { reason: "configuration lookup failed".into() }]);
        };
        self.used = used.clone();
        match wait {
            CsWait::GetLast => {
                self.probed_epoch = cfg.epoch;
                self.probed_members = cfg.members.clone();
                self.recon_epoch = cfg.epoch + 1;
            }
            CsWait::Descend => self.probed_members = cfg.members.clone(),
            CsWait::Cas { .. } => return Handled::Drop,
        }
        let e = self.recon_epoch;
        Handled::Done(self.probed_members.iter().map(|p| Effect::send(*p, Message::Probe { e })).collect())
    }

    fn on_cs_cas_reply(&mut self, req: u64, ok: bool) -> Handled {
        let Some((want, CsWait::Cas { members, leader })) = self.cs_wait.clone() else { return Handled::Drop };
        if want != req {
            return Handled::Drop;
        }
        self.cs_wait = None;
        if ok {
            Handled::Done(vec![Effect::send(leader, Message::NewConfig { e: self.recon_epoch, members })])
        } else {
            Handled::Done(vec![Effect::ReconfigAbandoned { reason: "compare-and-swap lost".into() }])
        }
    }

    /// The message's epoch must equal the epoch this process last joined.
    fn on_new_config(&mut self, e: Epoch, m: &BTreeSet<Pid>) -> Handled {
        if e < self.new_epoch {
            return Handled::Drop;
        }
        if e > self.new_epoch {
            return Handled::Defer;
        }
        let s0 = self.shard;
        self.status = Status::Leader;
        self.epoch.insert(s0, e);
        self.members.insert(s0, m.clone());
        self.leader.insert(s0, self.pid);
        self.next = log_length(&self.log);
        let state = Message::NewState { e, members: m.clone(), log: self.log.clone() };
        Handled::Done(m.iter().filter(|p| **p != self.pid).map(|p| Effect::send(*p, state.clone())).collect())
    }

    fn on_new_state(&mut self, from: Pid, e: Epoch, m: &BTreeSet<Pid>, log: &Log) -> Handled {
        if e < self.new_epoch {
            return Handled::Drop;
        }
        let s0 = self.shard;
        self.initialized = true;
        self.status = Status::Follower;
        // Fresh joiners were never probed; keep new_epoch ≥ epoch[s0].
        self.new_epoch = e;
        self.epoch.insert(s0, e);
        self.members.insert(s0, m.clone());
        self.leader.insert(s0, from);
        self.log = log.clone();
        Handled::Done(Vec::new())
    }

    fn on_config_change(&mut self, s: ShardId, e: Epoch, m: &BTreeSet<Pid>, l: Pid, ctx: &Ctx) -> Handled {
        if s == self.shard || self.epoch_of(s) >= e {
            return Handled::Drop;
        }
        self.epoch.insert(s, e);
        self.members.insert(s, m.clone());
        self.leader.insert(s, l);
        let pending: Vec<TxnId> = self.coord.iter().filter(|(_, c)| c.decided.is_none()).map(|(t, _)| *t).collect();
        Handled::Done(pending.into_iter().flat_map(|t| self.try_decide(t, ctx)).collect())
    }

    /// Slots this process holds as prepared but undecided.
    pub fn undecided_slots(&self) -> Vec<(Slot, TxnId)> {
        self.log.iter().filter(|(_, e)| e.phase == Phase::Prepared).map(|(k, e)| (*k, e.txn)).collect()
    }
}
