//! The RDMA commit protocol: one system-wide epoch, ACCEPT and DECISION
//! persisted by one-sided writes that followers cannot refuse, and whole
//! system reconfiguration.
//!
//! Safety rests on access control instead of epoch guards. A probed process
//! closes every incoming connection, so a coordinator still in an old epoch
//! can no longer obtain NIC acks from it; connections are reopened only
//! after the new state is installed, by the CONNECT handshake.
//!
//! The simulator flushes a process's buffers before it handles PROBE and
//! NEW_CONFIG, so every write acknowledged in an epoch is consumed in it.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::certification::{project, Decision, Payload};
use crate::config_service::GlobalConfig;
use crate::ids::{Epoch, NodeId, Pid, ShardId, Slot, TxnId};
use crate::message::{log_length, CsConfig, CsKey, Log, LogEntry, Message, Phase};
use crate::process::{compute_membership, compute_vote, CoordTxn, Ctx, Effect, Handled, Status};
use crate::protocol_mp::{CommandError, Snapshot};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RecStatus {
    Ready,
    Probing,
    Installing,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
enum CsWait {
    GetLast,
    Descend(ShardId),
    Cas(GlobalConfig),
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
struct ShardProbe {
    epoch: Epoch,
    members: BTreeSet<Pid>,
    responders: BTreeSet<Pid>,
    /// First initialized responder; it leads the shard in the new epoch.
    leader: Option<Pid>,
    descending: bool,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RdmaProcess {
    pub pid: Pid,
    pub shard: ShardId,
    pub epoch: Epoch,
    pub new_epoch: Epoch,
    pub members: BTreeMap<ShardId, BTreeSet<Pid>>,
    pub leader: BTreeMap<ShardId, Pid>,
    pub status: Status,
    pub log: Log,
    pub next: Slot,
    pub initialized: bool,
    pub rec_status: RecStatus,
    pub connections: BTreeSet<Pid>,
    pub recon_epoch: Epoch,
    probes: BTreeMap<ShardId, ShardProbe>,
    recon: Option<GlobalConfig>,
    prepare_acks: BTreeSet<Pid>,
    used: BTreeSet<Pid>,
    cs_wait: BTreeMap<u64, CsWait>,
    next_req: u64,
    pub coord: BTreeMap<TxnId, CoordTxn>,
}

impl RdmaProcess {
    /// Bootstrap members start connected to every other member.
    pub fn new(pid: Pid, shard: ShardId, boot: &GlobalConfig) -> RdmaProcess {
        let all = boot.all_members();
        let member = all.contains(&pid);
        RdmaProcess {
            pid,
            shard,
            epoch: if member { boot.epoch } else { 0 },
            new_epoch: if member { boot.epoch } else { 0 },
            members: boot.members.clone(),
            leader: boot.leaders.clone(),
            status: if boot.leaders.get(&shard) == Some(&pid) { Status::Leader } else { Status::Follower },
            log: Log::new(),
            next: 0,
            initialized: member,
            rec_status: RecStatus::Ready,
            connections: if member { all.into_iter().filter(|p| *p != pid).collect() } else { BTreeSet::new() },
            recon_epoch: 0,
            probes: BTreeMap::new(),
            recon: None,
            prepare_acks: BTreeSet::new(),
            used: BTreeSet::new(),
            cs_wait: BTreeMap::new(),
            next_req: 0,
            coord: BTreeMap::new(),
        }
    }

    pub fn snapshot(&self) -> Snapshot {
        Snapshot {
            shard: self.shard,
            status: self.status,
            epoch: self.epoch,
            new_epoch: self.new_epoch,
            initialized: self.initialized,
            members: self.members.get(&self.shard).cloned().unwrap_or_default(),
            leader: self.leader.get(&self.shard).copied(),
            log: self.log.clone(),
        }
    }

    fn all_members(&self) -> BTreeSet<Pid> {
        self.members.values().flatten().copied().collect()
    }

    fn followers_of(&self, s: ShardId) -> BTreeSet<Pid> {
        let mut f = self.members.get(&s).cloned().unwrap_or_default();
        if let Some(l) = self.leader.get(&s) {
            f.remove(l);
        }
        f
    }

    fn fresh_req(&mut self, w: CsWait) -> u64 {
        self.next_req += 1;
        self.cs_wait.insert(self.next_req, w);
        self.next_req
    }

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

    pub fn reconfigure(&mut self) -> Result<Vec<Effect>, CommandError> {
        if self.rec_status != RecStatus::Ready {
            return Err(CommandError::AlreadyProbing);
        }
        self.rec_status = RecStatus::Probing;
        self.probes.clear();
        let req = self.fresh_req(CsWait::GetLast);
        Ok(vec![Effect::send(NodeId::Cs, Message::CsGetLast { req, key: CsKey::Global })])
    }

    pub fn handle(&mut self, from: NodeId, msg: &Message, ctx: &Ctx) -> Handled {
        let sender = from.pid();
        match (msg, sender) {
            (Message::Prepare { t, payload }, _) => self.on_prepare(from, *t, payload.as_ref(), ctx),
            (Message::PrepareAck { e, s, k, t, payload, vote, vote_epoch }, _) => {
                self.on_prepare_ack(*e, *s, *k, *t, payload, *vote, *vote_epoch, ctx)
            }
            (Message::Probe { e }, _) => self.on_probe(from, *e),
            (Message::ProbeAck { initialized, e, s }, Some(p)) => self.on_probe_ack(p, *initialized, *e, *s, ctx),
            (Message::ConfigPrepare { e, members, leaders }, _) => self.on_config_prepare(from, *e, members, leaders),
            (Message::ConfigPrepareAck { e }, Some(p)) => self.on_config_prepare_ack(p, *e),
            (Message::NewConfigGlobal { e }, _) => self.on_new_config(*e),
            (Message::NewStateGlobal { e, log }, _) => self.on_new_state(*e, log),
            (Message::Connect { e }, Some(p)) => self.on_connect(p, *e, true),
            (Message::ConnectAck { e }, Some(p)) => self.on_connect(p, *e, false),
            (Message::CsReply { req, cfg, used }, _) => self.on_cs_reply(*req, cfg.as_ref(), used),
            (Message::CsCasReply { req, ok }, _) => self.on_cs_cas_reply(*req, *ok),
            _ => Handled::Drop,
        }
    }

    fn on_prepare(&mut self, from: NodeId, t: TxnId, l: Option<&Payload>, ctx: &Ctx) -> Handled {
        if self.status != Status::Leader {
            return Handled::Defer;
        }
        let (s0, e) = (self.shard, self.epoch);
        if let Some((k, en)) = self.log.iter().find(|(_, en)| en.txn == t) {
            let ack = Message::PrepareAck {
                e,
                s: s0,
                k: *k,
                t,
                payload: en.payload.clone(),
                vote: en.vote,
                vote_epoch: en.vote_epoch,
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
        if self.epoch > e {
            return Handled::Drop;
        }
        if self.epoch < e {
            return Handled::Defer;
        }
        let followers = self.followers_of(s);
        let pr = self.coord.entry(t).or_default().progress.entry((s, e)).or_default();
        pr.prepared = Some((k, d));
        pr.targets.extend(followers.iter().copied());
        let mut out: Vec<Effect> = followers
            .iter()
            .map(|f| Effect::SendRdma {
                to: *f,
                msg: Message::Accept { e, k, t, payload: l.clone(), vote: d, vote_epoch },
            })
            .collect();
        out.extend(self.try_decide(t, ctx));
        Handled::Done(out)
    }

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

    /// Writes cannot be refused; whether they land is decided by access control.
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

    fn try_decide(&mut self, t: TxnId, ctx: &Ctx) -> Vec<Effect> {
        let shards = ctx.registry.shards(t);
        let Some(c) = self.coord.get(&t) else { return Vec::new() };
        if c.decided.is_some() || shards.is_empty() {
            return Vec::new();
        }
        let mut ready = Vec::new();
        for s in &shards {
            match c.shard_ready(*s, self.epoch, &self.followers_of(*s)) {
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
            for m in self.members.get(&s).cloned().unwrap_or_default() {
                out.push(Effect::SendRdma { to: m, msg: Message::Decision { e: self.epoch, k, d } });
            }
        }
        out
    }

    fn on_probe(&mut self, from: NodeId, e: Epoch) -> Handled {
        if e < self.new_epoch {
            return Handled::Drop;
        }
        self.status = Status::Reconfiguring;
        let mut out: Vec<Effect> = std::mem::take(&mut self.connections).into_iter().map(Effect::Close).collect();
        // The loopback is closed as well, so a coordinator sharing this
        // process cannot persist an old-epoch write here.
        out.push(Effect::Close(self.pid));
        self.new_epoch = e;
        out.push(Effect::send(from, Message::ProbeAck { initialized: self.initialized, e, s: self.shard }));
        Handled::Done(out)
    }

    fn on_probe_ack(&mut self, from: Pid, initialized: bool, e: Epoch, s: ShardId, ctx: &Ctx) -> Handled {
        if self.rec_status != RecStatus::Probing || e != self.recon_epoch {
            return Handled::Drop;
        }
        let Some(pr) = self.probes.get_mut(&s) else { return Handled::Drop };
        if pr.descending {
            return Handled::Defer;
        }
        pr.responders.insert(from);
        if initialized {
            if pr.leader.is_none() {
                pr.leader = Some(from);
            }
            return Handled::Done(self.try_install(ctx));
        }
        if pr.leader.is_some() {
            return Handled::Done(self.try_install(ctx));
        }
        if !pr.members.contains(&from) || pr.epoch <= 1 {
            return Handled::Done(Vec::new());
        }
        pr.epoch -= 1;
        pr.descending = true;
        let ep = pr.epoch;
        let req = self.fresh_req(CsWait::Descend(s));
        Handled::Done(vec![Effect::send(NodeId::Cs, Message::CsGet { req, key: CsKey::Global, e: ep })])
    }

    /// Once every shard has an initialized responder and enough candidates
    /// to fill it, swap in the new configuration. A shard short of
    /// candidates waits for its remaining members before giving up.
    fn try_install(&mut self, ctx: &Ctx) -> Vec<Effect> {
        let pool = |s: &ShardId| -> BTreeSet<Pid> {
            ctx.spares.get(s).into_iter().flatten().copied().filter(|p| !self.used.contains(p)).collect()
        };
        for (s, pr) in &self.probes {
            if pr.leader.is_none() {
                return Vec::new();
            }
            let have = pr.responders.union(&pool(s)).count();
            if have < ctx.replicas && !pr.members.is_subset(&pr.responders) {
                return Vec::new();
            }
        }
        self.rec_status = RecStatus::Ready;
        let mut members = BTreeMap::new();
        let mut leaders = BTreeMap::new();
        for (s, pr) in &self.probes {
            let leader = pr.leader.expect("checked");
            let pool = pool(s);
            match compute_membership(&pr.responders, leader, &pool, ctx.replicas) {
                Ok(m) => {
                    members.insert(*s, m);
                    leaders.insert(*s, leader);
                }
                Err(err) => return vec![Effect::ReconfigAbandoned { reason: format!("{s}: {err}") }],
            }
        }
        let cfg = GlobalConfig { epoch: self.recon_epoch, members, leaders };
        let req = self.fresh_req(CsWait::Cas(cfg.clone()));
        vec![Effect::send(
            NodeId::Cs,
            Message::CsCas { req, key: CsKey::Global, expected: self.recon_epoch - 1, cfg: CsConfig::Global(cfg) },
        )]
    }

    fn on_cs_reply(&mut self, req: u64, cfg: Option<&CsConfig>, used: &BTreeSet<Pid>) -> Handled {
        let Some(wait) = self.cs_wait.remove(&req) else { return Handled::Drop };
        let Some(CsConfig::Global(cfg)) = cfg else {
            self.rec_status = RecStatus::Ready;
            return Handled::Done(vec![Effect::ReconfigAbandoned { reason: "configuration lookup failed".into() }]);
        };
        self.used = used.clone();
        match wait {
            CsWait::GetLast => {
                self.recon_epoch = cfg.epoch + 1;
                self.probes = cfg
                    .members
                    .iter()
                    .map(|(s, m)| (*s, ShardProbe { epoch: cfg.epoch, members: m.clone(), ..ShardProbe::default() }))
                    .collect();
                let e = self.recon_epoch;
                Handled::Done(cfg.all_members().into_iter().map(|p| Effect::send(p, Message::Probe { e })).collect())
            }
            CsWait::Descend(s) => {
                let e = self.recon_epoch;
                let Some(pr) = self.probes.get_mut(&s) else { return Handled::Drop };
                pr.descending = false;
                pr.members = cfg.members.get(&s).cloned().unwrap_or_default();
                Handled::Done(pr.members.iter().map(|p| Effect::send(*p, Message::Probe { e })).collect())
            }
            CsWait::Cas(_) => Handled::Drop,
        }
    }

    fn on_cs_cas_reply(&mut self, req: u64, ok: bool) -> Handled {
        let Some(CsWait::Cas(cfg)) = self.cs_wait.remove(&req) else { return Handled::Drop };
        if !ok {
            return Handled::Done(vec![Effect::ReconfigAbandoned { reason: "compare-and-swap lost".into() }]);
        }
        self.rec_status = RecStatus::Installing;
        self.prepare_acks.clear();
        let msg = Message::ConfigPrepare { e: cfg.epoch, members: cfg.members.clone(), leaders: cfg.leaders.clone() };
        let out = cfg.all_members().into_iter().map(|p| Effect::send(p, msg.clone())).collect();
        self.recon = Some(cfg);
        Handled::Done(out)
    }

    fn on_config_prepare(
        &mut self,
        from: NodeId,
        e: Epoch,
        m: &BTreeMap<ShardId, BTreeSet<Pid>>,
        leaders: &BTreeMap<ShardId, Pid>,
    ) -> Handled {
        if e < self.new_epoch {
            return Handled::Drop;
        }
        self.members = m.clone();
        self.leader = leaders.clone();
        self.new_epoch = e;
        Handled::Done(vec![Effect::send(from, Message::ConfigPrepareAck { e })])
    }

    fn on_config_prepare_ack(&mut self, from: Pid, e: Epoch) -> Handled {
        let Some(cfg) = self.recon.as_ref().filter(|c| c.epoch == e) else { return Handled::Drop };
        if self.rec_status != RecStatus::Installing {
            return Handled::Drop;
        }
        self.prepare_acks.insert(from);
        if !cfg.all_members().is_subset(&self.prepare_acks) {
            return Handled::Done(Vec::new());
        }
        self.rec_status = RecStatus::Ready;
        let out = cfg.leaders.values().map(|l| Effect::send(*l, Message::NewConfigGlobal { e })).collect();
        Handled::Done(out)
    }

    /// The epoch must be the one this process prepared for.
    fn on_new_config(&mut self, e: Epoch) -> Handled {
        if e < self.new_epoch {
            return Handled::Drop;
        }
        if e > self.new_epoch {
            return Handled::Defer;
        }
        self.status = Status::Leader;
        self.epoch = e;
        self.next = log_length(&self.log);
        let state = Message::NewStateGlobal { e, log: self.log.clone() };
        let own = self.members.get(&self.shard).cloned().unwrap_or_default();
        let mut out = vec![Effect::Open(self.pid)];
        out.extend(own.iter().filter(|p| **p != self.pid).map(|p| Effect::send(*p, state.clone())));
        out.extend(
            self.all_members().into_iter().filter(|p| *p != self.pid).map(|p| Effect::send(p, Message::Connect { e })),
        );
        Handled::Done(out)
    }

    fn on_new_state(&mut self, e: Epoch, log: &Log) -> Handled {
        if e < self.new_epoch {
            return Handled::Drop;
        }
        if e > self.new_epoch {
            return Handled::Defer;
        }
        self.status = Status::Follower;
        self.epoch = e;
        self.initialized = true;
        self.log = log.clone();
        // Same-shard followers connect too: a follower may coordinate and
        // must be able to persist decisions at its peers.
        let own_leader = self.leader.get(&self.shard).copied();
        let mut out = vec![Effect::Open(self.pid)];
        out.extend(
            self.all_members()
                .into_iter()
                .filter(|p| *p != self.pid && Some(*p) != own_leader)
                .map(|p| Effect::send(p, Message::Connect { e })),
        );
        Handled::Done(out)
    }

    fn on_connect(&mut self, from: Pid, e: Epoch, reply: bool) -> Handled {
        if e < self.epoch
            || (self.status != Status::Reconfiguring && e == self.epoch && self.connections.contains(&from))
        {
            return Handled::Drop;
        }
        if self.status == Status::Reconfiguring || e > self.epoch {
            return Handled::Defer;
        }
        self.connections.insert(from);
        let mut out = vec![Effect::Open(from)];
        if reply {
            out.push(Effect::send(from, Message::ConnectAck { e }));
        }
        Handled::Done(out)
    }

    pub fn undecided_slots(&self) -> Vec<(Slot, TxnId)> {
        self.log.iter().filter(|(_, e)| e.phase == Phase::Prepared).map(|(k, e)| (*k, e.txn)).collect()
    }
}
