//! Protocol invariants as predicates over a trace.
//!
//! A single pass replays the trace, tracking the latest state of each
//! process and the message facts the invariants quantify over. Rules:
//!
//! | rule | statement |
//! |------|-----------|
//! | inv1 | a follower that accepted slot `k` at `e` holds, while still at `e`, a hole-prefix of the leader's slots `1..=k` at PREPARE_ACK time |
//! | inv2 | slots `1..=k` of a transaction accepted at `e` are a hole-prefix at every process of the shard with a higher epoch |
//! | inv3 | no ACCEPT_ACK for an epoch below one already probed |
//! | inv4a/b | one decision per `(shard, k)`; one client decision per transaction |
//! | inv5 | a member dropped by an epoch with an accepted transaction never returns |
//! | inv6 | one ACCEPT content per `(shard, e, k)` |
//! | inv7 | a slot's payload is the shard projection of the certified payload, or empty if the vote is ABORT |
//! | inv8 | `new_epoch >= epoch` |
//! | inv9 | one slot per `(shard, e, t)` among ACCEPTs |
//! | inv10 | no transaction occupies two slots of one log |
//! | inv11a/b | accepted content agrees across epochs per slot and per transaction |
//! | inv12a/b | a decided slot was sent that decision at an epoch no later than the holder's; a COMMIT decision has a COMMIT vote |
//! | inv13 | a delivered RDMA ACCEPT finds its receiver at the PREPARE_ACK's epoch |
//!
//! In the global-epoch variants followers acknowledge nothing explicitly: a
//! NIC acknowledgement of the ACCEPT write stands for ACCEPT_ACK in inv2, 5
//! and 11, a write that lands stands for it in inv3, and its delivery does
//! for inv1.

use std::collections::{BTreeMap, BTreeSet};

use serde::Serialize;

use super::prefix::{log_prefix, prefix_holes, SlotView};
use super::{CheckError, Setup, Violation};
use crate::certification::{project, Decision, Payload};
use crate::ids::{Epoch, NodeId, Pid, ShardId, Slot, TxnId};
use crate::message::{CsConfig, CsKey, Message, Phase};
use crate::protocol_mp::Snapshot;
use crate::simulator::trace::{Record, Trace};

/// A transaction every follower of `(s, e)` acknowledged at slot `k`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Accepted {
    pub s: ShardId,
    pub e: Epoch,
    pub k: Slot,
    pub t: TxnId,
    pub l: Payload,
    pub d: Decision,
    pub vote_epoch: Epoch,
    /// Entry that completed the acknowledgements.
    pub at: usize,
}

/// Everything one pass learns: the violations and the accepted slots other
/// checks build on.
#[derive(Clone, Debug, Default)]
pub struct Facts {
    pub violations: Vec<Violation>,
    pub accepted: Vec<Accepted>,
}

pub fn check_invariants(trace: &Trace) -> Result<Vec<Violation>, CheckError> {
    let setup = Setup::from_trace(trace)?;
    Ok(walk(trace, &setup).violations)
}

/// Only inv4a and inv4b.
pub fn check_unique_decisions(trace: &Trace) -> Result<Vec<Violation>, CheckError> {
    let setup = Setup::from_trace(trace)?;
    Ok(walk(trace, &setup).violations.into_iter().filter(|v| v.rule.starts_with("inv4")).collect())
}

pub fn walk(trace: &Trace, setup: &Setup) -> Facts {
    let mut w = Walker::new(setup);
    for (i, e) in trace.entries.iter().enumerate() {
        w.step(i, &e.record);
    }
    w.finish();
    Facts { violations: w.out, accepted: w.accepted }
}

type AckKey = (ShardId, Epoch, Slot, TxnId, Decision);
type SlotKey = (ShardId, Epoch, Slot);
type SentDecision = (Epoch, Decision, usize);
/// A write as posted: trace entry, sender, receiver and message.
type Posted<'a> = (usize, Pid, Pid, &'a Message);

struct Walker<'a> {
    setup: &'a Setup,
    states: BTreeMap<Pid, (usize, Snapshot)>,
    certified: BTreeMap<TxnId, Payload>,
    writes: BTreeMap<u64, Posted<'a>>,
    /// Leader's slots `1..=k` when it sent PREPARE_ACK(e, s, k), plus the
    /// acknowledged content.
    alpha: BTreeMap<SlotKey, (usize, Vec<Option<SlotView>>)>,
    prepared: BTreeMap<SlotKey, (TxnId, Payload, Decision, Epoch)>,
    accepts: BTreeMap<SlotKey, (usize, SlotView)>,
    accept_slot: BTreeMap<(ShardId, Epoch, TxnId), (usize, Slot)>,
    acks: BTreeMap<AckKey, BTreeMap<Pid, usize>>,
    accepted: Vec<Accepted>,
    accepted_keys: BTreeSet<AckKey>,
    /// inv1 obligations per follower: `(s, e, k, entry)`.
    synced: BTreeMap<Pid, Vec<(ShardId, Epoch, Slot, usize)>>,
    probed: BTreeMap<(Pid, ShardId), (Epoch, usize)>,
    /// Shard DECISIONs per slot: `(e, d, entry)`.
    decisions: BTreeMap<(ShardId, Slot), Vec<SentDecision>>,
    client: BTreeMap<TxnId, (Decision, usize)>,
    cas_at: BTreeMap<(ShardId, Epoch), usize>,
    out: Vec<Violation>,
    seen: BTreeSet<(String, String)>,
}

impl<'a> Walker<'a> {
    fn new(setup: &'a Setup) -> Walker<'a> {
        Walker {
            setup,
            states: BTreeMap::new(),
            certified: BTreeMap::new(),
            writes: BTreeMap::new(),
            alpha: BTreeMap::new(),
            prepared: BTreeMap::new(),
            accepts: BTreeMap::new(),
            accept_slot: BTreeMap::new(),
            acks: BTreeMap::new(),
            accepted: Vec::new(),
            accepted_keys: BTreeSet::new(),
            synced: BTreeMap::new(),
            probed: BTreeMap::new(),
            decisions: BTreeMap::new(),
            client: BTreeMap::new(),
            cas_at: BTreeMap::new(),
            out: Vec::new(),
            seen: BTreeSet::new(),
        }
    }

    fn fail(&mut self, rule: &str, detail: String, witnesses: Vec<usize>) {
        if self.seen.insert((rule.to_string(), detail.clone())) {
            self.out.push(Violation::new(rule, detail, witnesses));
        }
    }

    fn shard(&self, n: NodeId) -> Option<ShardId> {
        n.pid().and_then(|p| self.setup.shard_of.get(&p).copied())
    }

    fn step(&mut self, i: usize, r: &'a Record) {
        match r {
            Record::Invoke { t, payload, .. } => {
                self.certified.insert(*t, payload.clone());
            }
            Record::State { p, state } => self.on_state(i, *p, state),
            Record::Send { src, dst, msg, .. } => self.on_send(i, *src, *dst, msg),
            Record::RdmaWrite { id, src, dst, msg, .. } => {
                self.writes.insert(*id, (i, *src, *dst, msg));
                self.on_send(i, NodeId::Process(*src), NodeId::Process(*dst), msg);
            }
            Record::RdmaLand { id, dst, accepted: true, .. } => self.on_land(i, *id, *dst),
            Record::RdmaAck { write, .. } => self.on_nic_ack(i, *write),
            Record::RdmaDeliver { id, dst, .. } => self.on_rdma_deliver(i, *id, *dst),
            Record::Cas { key, cfg, ok: true, .. } => match (key, cfg) {
                (CsKey::Shard(s), c) => {
                    self.cas_at.insert((*s, c.epoch()), i);
                }
                (CsKey::Global, CsConfig::Global(g)) => {
                    for s in g.members.keys() {
                        self.cas_at.insert((*s, g.epoch), i);
                    }
                }
                _ => {}
            },
            _ => {}
        }
    }

    fn on_state(&mut self, i: usize, p: Pid, st: &Snapshot) {
        let s = st.shard;
        if st.new_epoch < st.epoch {
            self.fail("inv8", format!("{p}: new_epoch {} below epoch {}", st.new_epoch, st.epoch), vec![i]);
        }
        let mut txns = BTreeMap::new();
        for (k, en) in &st.log {
            if let Some(k0) = txns.insert(en.txn, *k) {
                self.fail("inv10", format!("{p}: {} at slots {k0} and {k}", en.txn), vec![i]);
            }
            match self.certified.get(&en.txn) {
                None => self.fail("inv7", format!("{p}: slot {k} holds uncertified {}", en.txn), vec![i]),
                Some(l) => {
                    let ls = project(l, s, &self.setup.map);
                    let ok = en.payload == ls || (en.vote == Decision::Abort && en.payload.is_empty());
                    if !ok {
                        self.fail("inv7", format!("{p}: slot {k} payload differs from {}|{s}", en.txn), vec![i]);
                    }
                }
            }
            if en.phase != Phase::Decided {
                continue;
            }
            let Some(d) = en.dec else { continue };
            if d == Decision::Commit && en.vote != Decision::Commit {
                self.fail("inv12b", format!("{p}: slot {k} decided COMMIT on an ABORT vote"), vec![i]);
            }
            let sent = self.decisions.get(&(s, *k)).into_iter().flatten().find(|(e, d2, _)| *e <= st.epoch && *d2 == d);
            if sent.is_none() {
                self.fail(
                    "inv12a",
                    format!("{p}: slot {k} decided {d} at epoch {} without a matching DECISION", st.epoch),
                    vec![i],
                );
            }
        }

        let mut obligations = self.synced.remove(&p).unwrap_or_default();
        obligations.retain(|(_, e, _, _)| *e == st.epoch);
        for (s1, e, k, at) in &obligations {
            self.check_prefix("inv1", p, i, st, *s1, *e, *k, *at);
        }
        if !obligations.is_empty() {
            self.synced.insert(p, obligations);
        }
        let higher: Vec<(Epoch, Slot, usize)> =
            self.accepted.iter().filter(|a| a.s == s && st.epoch > a.e).map(|a| (a.e, a.k, a.at)).collect();
        for (e, k, at) in higher {
            self.check_prefix("inv2", p, i, st, s, e, k, at);
        }
        self.states.insert(p, (i, st.clone()));
    }

    /// Slots `1..=k` of `st` against the leader's at PREPARE_ACK(e, s, k).
    #[allow(clippy::too_many_arguments)]
    fn check_prefix(&mut self, rule: &str, p: Pid, i: usize, st: &Snapshot, s: ShardId, e: Epoch, k: Slot, at: usize) {
        let Some((pa, alpha)) = self.alpha.get(&(s, e, k)) else { return };
        let beta = log_prefix(&st.log, k);
        if !prefix_holes(&beta, alpha) {
            let pa = *pa;
            self.fail(
                rule,
                format!("{p} at epoch {}: slots 1..={k} are not a hole-prefix of {s}'s log at epoch {e}", st.epoch),
                vec![pa, at, i],
            );
        }
    }

    fn on_send(&mut self, i: usize, src: NodeId, dst: NodeId, msg: &Message) {
        match msg {
            Message::PrepareAck { e, s, k, t, payload, vote, vote_epoch } => {
                let Some(p) = src.pid() else { return };
                if !self.alpha.contains_key(&(*s, *e, *k)) {
                    let prefix = self.states.get(&p).map(|(_, st)| log_prefix(&st.log, *k)).unwrap_or_default();
                    self.alpha.insert((*s, *e, *k), (i, prefix));
                    self.prepared.insert((*s, *e, *k), (*t, payload.clone(), *vote, *vote_epoch));
                }
                self.try_accept(i, (*s, *e, *k, *t, *vote));
            }
            Message::Accept { e, k, t, payload, vote, .. } => {
                let Some(s) = self.shard(dst) else { return };
                let content = (*t, *vote, payload.clone());
                match self.accepts.get(&(s, *e, *k)) {
                    Some((j, c)) if *c != content => {
                        let j = *j;
                        self.fail("inv6", format!("two ACCEPTs for {s} epoch {e} slot {k} differ"), vec![j, i]);
                    }
                    Some(_) => {}
                    None => {
                        self.accepts.insert((s, *e, *k), (i, content));
                    }
                }
                match self.accept_slot.get(&(s, *e, *t)) {
                    Some((j, k0)) if k0 != k => {
                        let j = *j;
                        self.fail("inv9", format!("{t} sent to {s} epoch {e} at slots {k0} and {k}"), vec![j, i]);
                    }
                    Some(_) => {}
                    None => {
                        self.accept_slot.insert((s, *e, *t), (i, *k));
                    }
                }
            }
            Message::AcceptAck { s, e, k, t, vote } => {
                let Some(p) = src.pid() else { return };
                if let Some((pe, pi)) = self.probed.get(&(p, *s)).copied() {
                    if *e < pe {
                        self.fail("inv3", format!("{p} acked epoch {e} after probing epoch {pe}"), vec![pi, i]);
                    }
                }
                self.acks.entry((*s, *e, *k, *t, *vote)).or_default().entry(p).or_insert(i);
                self.oblige(p, *s, *e, *k, i);
                self.try_accept(i, (*s, *e, *k, *t, *vote));
            }
            Message::ProbeAck { e, s, .. } => {
                let Some(p) = src.pid() else { return };
                let slot = self.probed.entry((p, *s)).or_insert((*e, i));
                if *e > slot.0 {
                    *slot = (*e, i);
                }
            }
            Message::Decision { e, k, d } => {
                let Some(s) = self.shard(dst) else { return };
                let prior = self.decisions.entry((s, *k)).or_default();
                let clash = prior.iter().find(|(_, d2, _)| d2 != d).map(|(_, _, j)| *j);
                prior.push((*e, *d, i));
                if let Some(j) = clash {
                    self.fail("inv4a", format!("{s} slot {k} sent both COMMIT and ABORT"), vec![j, i]);
                }
            }
            Message::DecisionClient { t, d } => match self.client.get(t) {
                Some((d0, j)) if d0 != d => {
                    let j = *j;
                    self.fail("inv4b", format!("{t} externalized as both {d0} and {d}"), vec![j, i]);
                }
                Some(_) => {}
                None => {
                    self.client.insert(*t, (*d, i));
                }
            },
            _ => {}
        }
    }

    /// Records an inv1 obligation and checks it against `p`'s current state.
    fn oblige(&mut self, p: Pid, s: ShardId, e: Epoch, k: Slot, at: usize) {
        self.synced.entry(p).or_default().push((s, e, k, at));
        if let Some((_, st)) = self.states.get(&p).cloned() {
            if st.epoch == e && st.log.contains_key(&k) {
                self.check_prefix("inv1", p, at, &st, s, e, k, at);
            }
        }
    }

    fn on_land(&mut self, i: usize, id: u64, dst: Pid) {
        let Some((_, _, _, Message::Accept { e, .. })) = self.writes.get(&id).copied() else { return };
        let Some(s) = self.setup.shard_of.get(&dst).copied() else { return };
        if let Some((pe, pi)) = self.probed.get(&(dst, s)).copied() {
            if *e < pe {
                self.fail("inv3", format!("{dst} took an epoch-{e} ACCEPT after probing epoch {pe}"), vec![pi, i]);
            }
        }
    }

    fn on_nic_ack(&mut self, i: usize, write: u64) {
        let Some((_, _, dst, Message::Accept { e, k, t, vote, .. })) = self.writes.get(&write).copied() else {
            return;
        };
        let Some(s) = self.setup.shard_of.get(&dst).copied() else { return };
        self.acks.entry((s, *e, *k, *t, *vote)).or_default().entry(dst).or_insert(i);
        self.try_accept(i, (s, *e, *k, *t, *vote));
    }

    fn on_rdma_deliver(&mut self, i: usize, id: u64, dst: Pid) {
        let Some((wi, _, _, Message::Accept { e, k, .. })) = self.writes.get(&id).copied() else { return };
        let Some(s) = self.setup.shard_of.get(&dst).copied() else { return };
        let (si, epoch) = self.states.get(&dst).map_or((wi, 0), |(j, st)| (*j, st.epoch));
        if epoch != *e {
            self.fail(
                "inv13",
                format!("{dst} handled an ACCEPT prepared at epoch {e} while at epoch {epoch}"),
                vec![wi, si, i],
            );
            return;
        }
        self.oblige(dst, s, *e, *k, i);
    }

    fn try_accept(&mut self, i: usize, key: AckKey) {
        let (s, e, k, t, d) = key;
        if self.accepted_keys.contains(&key) {
            return;
        }
        let Some(mut followers) = self.setup.followers(s, e) else { return };
        let acked = self.acks.get(&key);
        if !followers.all(|p| acked.is_some_and(|a| a.contains_key(&p))) {
            return;
        }
        let Some((t0, l, d0, vote_epoch)) = self.prepared.get(&(s, e, k)).cloned() else { return };
        if (t0, d0) != (t, d) {
            return;
        }
        self.accepted_keys.insert(key);
        let a = Accepted { s, e, k, t, l, d, vote_epoch, at: i };
        let clashes: Vec<(String, String, usize)> = self
            .accepted
            .iter()
            .filter(|b| b.s == s)
            .filter_map(|b| {
                if b.k == k && (b.t, &b.l, b.d) != (t, &a.l, d) {
                    Some(("inv11a".into(), format!("{s} slot {k} accepted as {} at {} and {t} at {e}", b.t, b.e), b.at))
                } else if b.t == t && (b.k, &b.l, b.d) != (k, &a.l, d) {
                    Some(("inv11b".into(), format!("{t} accepted on {s} at slot {} and slot {k}", b.k), b.at))
                } else {
                    None
                }
            })
            .collect();
        for (rule, detail, j) in clashes {
            self.fail(&rule, detail, vec![j, i]);
        }
        let later: Vec<(Pid, usize, Snapshot)> = self
            .states
            .iter()
            .filter(|(_, (_, st))| st.shard == s && st.epoch > e)
            .map(|(p, (j, st))| (*p, *j, st.clone()))
            .collect();
        self.accepted.push(a);
        for (p, j, st) in later {
            self.check_prefix("inv2", p, j, &st, s, e, k, i);
        }
    }

    fn finish(&mut self) {
        let epochs: BTreeMap<(ShardId, Epoch), usize> =
            self.accepted.iter().map(|a| ((a.s, a.e), a.at)).fold(BTreeMap::new(), |mut m, (k, at)| {
                m.entry(k).or_insert(at);
                m
            });
        for ((s, e), at) in epochs {
            let Some(configs) = self.setup.configs.get(&s) else { continue };
            let Some(now) = configs.get(&e) else { continue };
            let dropped: BTreeSet<Pid> = configs
                .range(..e)
                .flat_map(|(_, c)| c.members.iter().copied())
                .filter(|p| !now.members.contains(p))
                .collect();
            for (e2, c) in configs.range(e + 1..) {
                for p in c.members.intersection(&dropped) {
                    let mut w = vec![at];
                    w.extend(self.cas_at.get(&(s, *e2)));
                    let detail = format!("{p} left {s} before epoch {e} and rejoined at {e2}");
                    self.out.push(Violation::new("inv5", detail, w));
                }
            }
        }
    }
}
