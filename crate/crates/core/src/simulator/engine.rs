//! The discrete-event engine.
//!
//! Every step picks one enabled event: the head of a FIFO channel, an RDMA
//! landing, acknowledgement or pull, or the invocation of a generated
//! transaction. The choice is uniform under a seeded ChaCha8 generator,
//! except that an event older than `starvation_age` steps preempts the draw,
//! which keeps random schedules fair. Script actions run between steps.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::certification::{shards_of, Decision, Payload, Serializability};
use crate::config_service::ConfigService;
use crate::ids::{ClientId, NodeId, Pid, ShardId, TxnId};
use crate::message::{CsConfig, CsKey, Message, Phase};
use crate::process::{Ctx, Effect, Handled, Registry, TxnInfo};
use crate::protocol_mp::{CommandError, MpProcess, Persistence, Snapshot};
use crate::protocol_rdma::RdmaProcess;
use crate::rdma_channel::{Landing, RdmaEvent, RdmaNet, Write};
use crate::simulator::scenario::{Action, Model, NodePat, Placement, Resolved, Scenario, ScenarioError, Trigger};
use crate::simulator::trace::{Record, Trace};
use crate::simulator::workload::Store;

#[derive(Clone, Debug)]
#[allow(clippy::large_enum_variant)]
pub enum Proc {
    Mp(MpProcess),
    Rdma(RdmaProcess),
}

impl Proc {
    pub fn snapshot(&self) -> Snapshot {
        match self {
            Proc::Mp(p) => p.snapshot(),
            Proc::Rdma(p) => p.snapshot(),
        }
    }

    fn handle(&mut self, from: NodeId, msg: &Message, ctx: &Ctx) -> Handled {
        match self {
            Proc::Mp(p) => p.handle(from, msg, ctx),
            Proc::Rdma(p) => p.handle(from, msg, ctx),
        }
    }

    fn certify(&mut self, t: TxnId, l: &Payload, ctx: &Ctx) -> Result<Vec<Effect>, CommandError> {
        match self {
            Proc::Mp(p) => p.certify(t, l, ctx),
            Proc::Rdma(p) => p.certify(t, l, ctx),
        }
    }

    fn retry(&mut self, k: u64, ctx: &Ctx) -> Result<Vec<Effect>, CommandError> {
        match self {
            Proc::Mp(p) => p.retry(k, ctx),
            Proc::Rdma(p) => p.retry(k, ctx),
        }
    }

    fn reconfigure(&mut self, s: ShardId) -> Result<Vec<Effect>, CommandError> {
        match self {
            Proc::Mp(p) => p.reconfigure(s),
            Proc::Rdma(p) => p.reconfigure(),
        }
    }

    fn on_rdma_ack(&mut self, to: Pid, msg: &Message, ctx: &Ctx) -> Vec<Effect> {
        match self {
            Proc::Mp(p) => p.on_rdma_ack(to, msg, ctx),
            Proc::Rdma(p) => p.on_rdma_ack(to, msg, ctx),
        }
    }

    fn on_rdma_deliver(&mut self, msg: &Message) -> Vec<Effect> {
        match self {
            Proc::Mp(p) => p.on_rdma_deliver(msg),
            Proc::Rdma(p) => p.on_rdma_deliver(msg),
        }
    }

    pub fn undecided_slots(&self) -> Vec<(u64, TxnId)> {
        match self {
            Proc::Mp(p) => p.undecided_slots(),
            Proc::Rdma(p) => p.undecided_slots(),
        }
    }
}

#[derive(Clone, Debug)]
struct InFlight {
    id: u64,
    msg: Message,
    sent: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Ev {
    Chan(NodeId, NodeId),
    Rdma(RdmaEvent),
    Invoke(TxnId),
}

/// Outcome of a run.
#[derive(Clone, Debug)]
pub struct RunResult {
    pub trace: Trace,
    pub steps: u64,
    /// Stopped by the step budget while work remained.
    pub exhausted: bool,
    /// First decision each client learned.
    pub decisions: BTreeMap<TxnId, Decision>,
    pub finals: BTreeMap<Pid, Snapshot>,
    pub crashed: BTreeSet<Pid>,
}

pub struct Engine {
    res: Resolved,
    model: Model,
    rng: ChaCha8Rng,
    procs: BTreeMap<Pid, Proc>,
    alive: BTreeSet<Pid>,
    cs: ConfigService,
    channels: BTreeMap<(NodeId, NodeId), VecDeque<InFlight>>,
    parked: BTreeMap<Pid, Vec<(NodeId, InFlight)>>,
    net: RdmaNet,
    write_sent: BTreeMap<u64, u64>,
    registry: Registry,
    store: Store,
    decisions: BTreeMap<TxnId, Decision>,
    pending_invokes: Vec<TxnId>,
    cursor: usize,
    blocks: Vec<(NodePat, NodePat)>,
    retries: BTreeMap<TxnId, u32>,
    trace: Trace,
    step: u64,
    next_id: u64,
    last_snap: BTreeMap<Pid, Snapshot>,
    certifier: Serializability,
    spares: BTreeMap<ShardId, Vec<Pid>>,
}

/// Runs a scenario to quiescence or its step budget.
pub fn run(scenario: &Scenario) -> Result<RunResult, ScenarioError> {
    Ok(Engine::new(scenario)?.run())
}

macro_rules! ctx {
    ($e:ident) => {
        Ctx {
            map: &$e.res.map,
            registry: &$e.registry,
            certifier: &$e.certifier,
            spares: &$e.spares,
            replicas: $e.res.scenario.system.replicas,
        }
    };
}

impl Engine {
    pub fn new(scenario: &Scenario) -> Result<Engine, ScenarioError> {
        let res = scenario.resolve()?;
        let sys = &scenario.system;
        let model = sys.model;
        let mut procs = BTreeMap::new();
        let shard_boot = res.shard_boot();
        let global_boot = res.global_boot();
        for (p, s) in res.processes() {
            let proc = match model {
                Model::Mp => Proc::Mp(MpProcess::new(p, s, &shard_boot, Persistence::Messages)),
                Model::NaiveRdma => Proc::Mp(MpProcess::new(p, s, &shard_boot, Persistence::Rdma)),
                Model::Rdma => Proc::Rdma(RdmaProcess::new(p, s, &global_boot)),
            };
            procs.insert(p, proc);
        }
        let cs = match model {
            Model::Rdma => ConfigService::global(global_boot.clone()),
            _ => ConfigService::per_shard(shard_boot),
        };
        let mut net = RdmaNet::new(sys.rdma_capacity, model == Model::Rdma);
        if model == Model::Rdma {
            let all = global_boot.all_members();
            for a in &all {
                for b in &all {
                    if a != b {
                        net.open(*a, *b);
                    }
                }
            }
        }
        let mut trace = Trace::default();
        trace.push(0, Record::Meta { scenario: scenario.clone(), seed: sys.seed });
        let mut last_snap = BTreeMap::new();
        for (p, proc) in &procs {
            let snap = proc.snapshot();
            trace.push(0, Record::State { p: *p, state: snap.clone() });
            last_snap.insert(*p, snap);
        }
        Ok(Engine {
            spares: res.spares(),
            alive: procs.keys().copied().collect(),
            pending_invokes: (1..=scenario.workload.transactions).map(TxnId).collect(),
            rng: ChaCha8Rng::seed_from_u64(sys.seed),
            res,
            model,
            procs,
            cs,
            channels: BTreeMap::new(),
            parked: BTreeMap::new(),
            net,
            write_sent: BTreeMap::new(),
            registry: Registry::default(),
            store: Store::default(),
            decisions: BTreeMap::new(),
            cursor: 0,
            blocks: Vec::new(),
            retries: BTreeMap::new(),
            trace,
            step: 0,
            next_id: 0,
            last_snap,
            certifier: Serializability,
        })
    }

    pub fn run(mut self) -> RunResult {
        let max = self.res.scenario.system.max_steps;
        let mut exhausted = false;
        loop {
            let enabled = self.enabled();
            if let Some(st) = self.res.script.get(self.cursor).cloned() {
                let quiet = enabled.is_empty();
                let ready = match st.trigger {
                    Trigger::At(n) => self.step >= n || quiet,
                    Trigger::Quiet => quiet,
                };
                if ready {
                    self.cursor += 1;
                    self.exec(&st.action);
                    continue;
                }
            }
            if enabled.is_empty() {
                if self.cursor < self.res.script.len() || self.recover() {
                    continue;
                }
                break;
            }
            if self.step >= max {
                exhausted = true;
                break;
            }
            let ev = self.pick(&enabled);
            self.step += 1;
            self.fire(ev);
        }
        RunResult {
            steps: self.step,
            exhausted,
            decisions: self.decisions,
            finals: self.procs.iter().map(|(p, x)| (*p, x.snapshot())).collect(),
            crashed: self.procs.keys().filter(|p| !self.alive.contains(p)).copied().collect(),
            trace: self.trace,
        }
    }

    fn blocked(&self, src: NodeId, dst: NodeId) -> bool {
        self.blocks.iter().any(|(a, b)| a.matches(src) && b.matches(dst))
    }

    fn live(&self, n: NodeId) -> bool {
        n.pid().is_none_or(|p| self.alive.contains(&p))
    }

    fn enabled(&self) -> Vec<Ev> {
        let mut out: Vec<Ev> = self
            .channels
            .iter()
            .filter(|((src, dst), q)| !q.is_empty() && self.live(*dst) && !self.blocked(*src, *dst))
            .map(|((src, dst), _)| Ev::Chan(*src, *dst))
            .collect();
        for ev in self.net.enabled() {
            let ok = match ev {
                RdmaEvent::Land { sender, receiver } => {
                    self.alive.contains(&receiver) && !self.blocked(NodeId::Process(sender), NodeId::Process(receiver))
                }
                RdmaEvent::Ack { sender, .. } => self.alive.contains(&sender),
                RdmaEvent::Pull { receiver, .. } => self.alive.contains(&receiver),
            };
            if ok {
                out.push(Ev::Rdma(ev));
            }
        }
        out.extend(self.pending_invokes.iter().map(|t| Ev::Invoke(*t)));
        out
    }

    fn age(&self, ev: Ev) -> Option<u64> {
        let sent = match ev {
            Ev::Chan(a, b) => self.channels.get(&(a, b))?.front()?.sent,
            Ev::Rdma(r) => *self.write_sent.get(&self.net.event_id(r)?)?,
            Ev::Invoke(_) => return None,
        };
        Some(self.step.saturating_sub(sent))
    }

    fn pick(&mut self, enabled: &[Ev]) -> Ev {
        let limit = self.res.scenario.system.starvation_age;
        let oldest = enabled.iter().filter_map(|e| self.age(*e).map(|a| (a, *e))).max_by_key(|(a, _)| *a);
        if let Some((a, e)) = oldest {
            if a > limit {
                return e;
            }
        }
        *enabled.choose(&mut self.rng).expect("non-empty")
    }

    fn fresh_id(&mut self) -> u64 {
        self.next_id += 1;
        self.next_id
    }

    fn fire(&mut self, ev: Ev) {
        match ev {
            Ev::Chan(src, dst) => {
                let inf = self.channels.get_mut(&(src, dst)).and_then(VecDeque::pop_front).expect("enabled");
                match dst {
                    NodeId::Cs => self.deliver_cs(src, inf),
                    NodeId::Client(c) => self.deliver_client(src, c, inf),
                    NodeId::Process(p) => {
                        self.offer(p, src, inf, true);
                    }
                }
            }
            Ev::Rdma(RdmaEvent::Land { sender, receiver }) => match self.net.land(sender, receiver) {
                Landing::Accepted(w) => {
                    self.push(Record::RdmaLand { id: w.id, src: sender, dst: receiver, accepted: true })
                }
                Landing::Rejected(w) => {
                    self.push(Record::RdmaLand { id: w.id, src: sender, dst: receiver, accepted: false })
                }
                Landing::Blocked | Landing::Nothing => {}
            },
            Ev::Rdma(RdmaEvent::Ack { sender, receiver }) => {
                let Some(w) = self.net.ack(sender, receiver) else { return };
                let id = self.fresh_id();
                self.push(Record::RdmaAck { id, write: w.id, src: sender, dst: receiver });
                let effects = {
                    let ctx = ctx!(self);
                    self.procs.get_mut(&sender).expect("known").on_rdma_ack(receiver, &w.msg, &ctx)
                };
                self.apply(sender, effects, Some(id));
                self.reoffer(sender);
            }
            Ev::Rdma(RdmaEvent::Pull { receiver, sender }) => {
                let Some(w) = self.net.pull(receiver, sender) else { return };
                self.rdma_deliver(receiver, sender, w, false);
                self.reoffer(receiver);
            }
            Ev::Invoke(t) => {
                self.pending_invokes.retain(|x| *x != t);
                self.invoke(t);
            }
        }
    }

    fn rdma_deliver(&mut self, receiver: Pid, sender: Pid, w: Write, flush: bool) {
        self.push(Record::RdmaDeliver { id: w.id, src: sender, dst: receiver, flush });
        let effects = self.procs.get_mut(&receiver).expect("known").on_rdma_deliver(&w.msg);
        self.apply(receiver, effects, Some(w.id));
    }

    fn push(&mut self, r: Record) {
        self.trace.push(self.step, r);
    }

    fn deliver_cs(&mut self, src: NodeId, inf: InFlight) {
        self.push(Record::Deliver { id: inf.id, src, dst: NodeId::Cs });
        let out = self.cs.handle(&inf.msg);
        if let (Some(ok), Message::CsCas { key, expected, cfg, .. }) = (out.swapped, &inf.msg) {
            self.push(Record::Cas { key: *key, expected: *expected, cfg: cfg.clone(), ok });
        }
        if let Some(reply) = out.reply {
            self.send(NodeId::Cs, src, reply, Some(inf.id));
        }
        for (p, m) in out.broadcast {
            self.send(NodeId::Cs, NodeId::Process(p), m, Some(inf.id));
        }
    }

    fn deliver_client(&mut self, src: NodeId, c: ClientId, inf: InFlight) {
        self.push(Record::Deliver { id: inf.id, src, dst: NodeId::Client(c) });
        if let Message::DecisionClient { t, d } = inf.msg {
            if let std::collections::btree_map::Entry::Vacant(e) = self.decisions.entry(t) {
                e.insert(d);
                self.push(Record::ClientDecision { t, client: c, d });
                if d == Decision::Commit {
                    if let Some(info) = self.registry.get(t) {
                        self.store.apply(&info.payload.clone());
                    }
                }
            }
        }
    }

    /// Hands a message to a process; `first` distinguishes a fresh delivery
    /// from a re-offer of a parked one.
    fn offer(&mut self, p: Pid, from: NodeId, inf: InFlight, first: bool) -> bool {
        if self.model == Model::Rdma && matches!(inf.msg, Message::Probe { .. } | Message::NewConfigGlobal { .. }) {
            for (sender, w) in self.net.flush(p) {
                self.rdma_deliver(p, sender, w, true);
            }
        }
        let handled = {
            let ctx = ctx!(self);
            self.procs.get_mut(&p).expect("known").handle(from, &inf.msg, &ctx)
        };
        let dst = NodeId::Process(p);
        match handled {
            Handled::Done(effects) => {
                self.push(Record::Deliver { id: inf.id, src: from, dst });
                self.apply(p, effects, Some(inf.id));
                if first {
                    self.reoffer(p);
                }
                true
            }
            Handled::Defer => {
                if first {
                    self.push(Record::Defer { id: inf.id, src: from, dst });
                    self.parked.entry(p).or_default().push((from, inf));
                }
                false
            }
            Handled::Drop => {
                self.push(Record::Drop { id: inf.id, src: from, dst });
                if !first {
                    self.parked.entry(p).or_default().retain(|(_, x)| x.id != inf.id);
                }
                false
            }
        }
    }

    /// Offers parked messages again until none makes progress.
    fn reoffer(&mut self, p: Pid) {
        'outer: loop {
            let pending = self.parked.get(&p).cloned().unwrap_or_default();
            for (from, inf) in pending {
                if !self.alive.contains(&p) {
                    return;
                }
                let id = inf.id;
                if self.offer(p, from, inf, false) {
                    self.parked.entry(p).or_default().retain(|(_, x)| x.id != id);
                    continue 'outer;
                }
            }
            return;
        }
    }

    fn send(&mut self, src: NodeId, dst: NodeId, msg: Message, cause: Option<u64>) {
        let id = self.fresh_id();
        self.push(Record::Send { id, src, dst, msg: msg.clone(), cause });
        if !self.live(dst) {
            self.push(Record::Lost { id, src, dst });
            return;
        }
        self.channels.entry((src, dst)).or_default().push_back(InFlight { id, msg, sent: self.step });
    }

    /// Records the state change and performs the effects of one transition.
    fn apply(&mut self, p: Pid, effects: Vec<Effect>, cause: Option<u64>) {
        for e in &effects {
            if let Effect::Vote(v) = e {
                self.push(Record::Vote { p, vote: v.clone() });
            }
        }
        let snap = self.procs[&p].snapshot();
        if self.last_snap.get(&p) != Some(&snap) {
            self.push(Record::State { p, state: snap.clone() });
            self.last_snap.insert(p, snap);
        }
        for e in effects {
            match e {
                Effect::Send { to, msg } => self.send(NodeId::Process(p), to, msg, cause),
                Effect::SendRdma { to, msg } => {
                    let id = self.fresh_id();
                    self.push(Record::RdmaWrite { id, src: p, dst: to, msg: msg.clone(), cause });
                    if !self.alive.contains(&to) {
                        self.push(Record::Lost { id, src: NodeId::Process(p), dst: NodeId::Process(to) });
                        continue;
                    }
                    self.write_sent.insert(id, self.step);
                    self.net.send(p, to, Write { id, msg });
                }
                Effect::Open(peer) => {
                    self.net.open(p, peer);
                    self.push(Record::Open { owner: p, peer });
                }
                Effect::Close(peer) => {
                    self.net.close(p, peer);
                    self.push(Record::Close { owner: p, peer });
                }
                Effect::Vote(_) => {}
                Effect::ReconfigAbandoned { reason } => self.push(Record::Abandoned { p, reason }),
            }
        }
    }

    fn current_members(&self, s: ShardId) -> BTreeSet<Pid> {
        match self.cs.get_last(if self.model == Model::Rdma { CsKey::Global } else { CsKey::Shard(s) }) {
            Ok(CsConfig::Shard(c)) => c.members,
            Ok(CsConfig::Global(g)) => g.members.get(&s).cloned().unwrap_or_default(),
            Err(_) => BTreeSet::new(),
        }
    }

    fn skip(&mut self, p: Option<Pid>, what: String) {
        self.push(Record::Skipped { p, what });
    }

    fn exec(&mut self, action: &Action) {
        match action {
            Action::Crash { pid, shard } => {
                let target = match (pid, shard) {
                    (Some(p), _) => Some(*p),
                    (None, Some(s)) => {
                        let cands: Vec<Pid> =
                            self.current_members(*s).into_iter().filter(|p| self.alive.contains(p)).collect();
                        cands.choose(&mut self.rng).copied()
                    }
                    (None, None) => None,
                };
                match target {
                    Some(p) if self.alive.contains(&p) => self.crash(p),
                    _ => self.skip(*pid, "crash: no live target".into()),
                }
            }
            Action::Reconfigure { pid, shard } => {
                let p = match pid {
                    Some(p) => *p,
                    None => {
                        let live: Vec<Pid> = self.alive.iter().copied().collect();
                        match live.choose(&mut self.rng) {
                            Some(p) => *p,
                            None => return self.skip(None, "reconfigure: nobody alive".into()),
                        }
                    }
                };
                if !self.alive.contains(&p) {
                    return self.skip(Some(p), "reconfigure: initiator crashed".into());
                }
                let s = match shard {
                    Some(s) => *s,
                    None => ShardId(self.rng.gen_range(1..=self.res.scenario.system.shards)),
                };
                match self.procs.get_mut(&p).expect("known").reconfigure(s) {
                    Ok(effects) => {
                        let shard = (self.model != Model::Rdma).then_some(s);
                        self.push(Record::Reconfigure { p, shard });
                        self.apply(p, effects, None);
                        self.reoffer(p);
                    }
                    Err(e) => self.skip(Some(p), format!("reconfigure: {e}")),
                }
            }
            Action::Retry { pid, txn } => {
                self.retry(*pid, *txn);
            }
            Action::Certify { txn } => self.invoke(*txn),
            Action::Block { src, dst } => {
                self.blocks.push((*src, *dst));
                self.push(Record::Block { src: src.to_string(), dst: dst.to_string(), on: true });
            }
            Action::Unblock { src, dst } => {
                self.blocks.retain(|b| *b != (*src, *dst));
                self.push(Record::Block { src: src.to_string(), dst: dst.to_string(), on: false });
            }
        }
    }

    fn crash(&mut self, p: Pid) {
        self.alive.remove(&p);
        self.push(Record::Crash { p });
        let dst = NodeId::Process(p);
        let keys: Vec<(NodeId, NodeId)> = self.channels.keys().filter(|(_, d)| *d == dst).copied().collect();
        for k in keys {
            for inf in self.channels.remove(&k).unwrap_or_default() {
                self.push(Record::Lost { id: inf.id, src: k.0, dst });
            }
        }
        self.parked.remove(&p);
        self.net.crash(p);
    }

    fn retry(&mut self, p: Pid, t: TxnId) -> bool {
        if !self.alive.contains(&p) {
            self.skip(Some(p), format!("retry {t}: process crashed"));
            return false;
        }
        let slot = self.procs[&p]
            .snapshot()
            .log
            .iter()
            .find(|(_, e)| e.txn == t && e.phase == Phase::Prepared)
            .map(|(k, _)| *k);
        let Some(k) = slot else {
            self.skip(Some(p), format!("retry {t}: not prepared here"));
            return false;
        };
        let result = {
            let ctx = ctx!(self);
            self.procs.get_mut(&p).expect("known").retry(k, &ctx)
        };
        match result {
            Ok(effects) => {
                self.push(Record::Retry { p, k, t });
                self.apply(p, effects, None);
                self.reoffer(p);
                true
            }
            Err(e) => {
                self.skip(Some(p), format!("retry {t}: {e}"));
                false
            }
        }
    }

    /// Quiet-time coordinator recovery: retry one undecided prepared
    /// transaction from the lowest live process holding it.
    fn recover(&mut self) -> bool {
        let budget = self.res.scenario.faults.retry_budget;
        if budget == 0 {
            return false;
        }
        let mut cands: BTreeMap<TxnId, Pid> = BTreeMap::new();
        for p in &self.alive {
            for (_, t) in self.procs[p].undecided_slots() {
                if !self.decisions.contains_key(&t) && self.retries.get(&t).copied().unwrap_or(0) < budget {
                    cands.entry(t).or_insert(*p);
                }
            }
        }
        for (t, p) in cands {
            *self.retries.entry(t).or_insert(0) += 1;
            if self.retry(p, t) {
                return true;
            }
        }
        false
    }

    fn invoke(&mut self, t: TxnId) {
        let sys = self.res.scenario.system.clone();
        let wl = self.res.scenario.workload.clone();
        let (coordinator, placement, payload) = match wl.txn.iter().find(|x| x.id == t) {
            Some(spec) => {
                if !self.alive.contains(&spec.coordinator) {
                    return self.skip(Some(spec.coordinator), format!("certify {t}: coordinator crashed"));
                }
                let l = self.store.payload(t, &spec.objects, &spec.read_only);
                (spec.coordinator, spec.client.unwrap_or(wl.client), l)
            }
            None => {
                let live: Vec<Pid> =
                    self.alive.iter().copied().filter(|p| self.procs[p].snapshot().initialized).collect();
                let Some(c) = live.choose(&mut self.rng).copied() else {
                    return self.skip(None, format!("certify {t}: nobody alive"));
                };
                let per = self.res.objects_per_shard;
                let objs = self.store.random_objects(&mut self.rng, sys.shards, per, wl.conflict_rate);
                (c, wl.client, self.store.payload(t, &objs, &[]))
            }
        };
        let client = ClientId(t.0);
        let host = (placement == Placement::Colocated).then_some(coordinator);
        let shards = shards_of(&payload, &self.res.map);
        self.registry
            .register(t, TxnInfo { payload: payload.clone(), shards: shards.clone(), client: NodeId::Client(client) });
        self.push(Record::Invoke {
            t,
            coordinator,
            client,
            host,
            payload: payload.clone(),
            shards: shards.into_iter().collect(),
        });
        let result = {
            let ctx = ctx!(self);
            self.procs.get_mut(&coordinator).expect("known").certify(t, &payload, &ctx)
        };
        match result {
            Ok(effects) => {
                self.apply(coordinator, effects, None);
                self.reoffer(coordinator);
            }
            Err(e) => self.skip(Some(coordinator), format!("certify {t}: {e}")),
        }
    }
}
