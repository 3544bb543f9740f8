//! Plumbing shared by both protocol variants: the effects a transition may
//! emit, the read-only context handed to every transition, the transaction
//! registry, coordinator bookkeeping and `compute_membership`.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::certification::{Certifier, Decision, Payload, ShardMap};
use crate::ids::{Epoch, NodeId, Pid, ShardId, Slot, TxnId};
use crate::message::{Log, LogEntry, Message, Phase};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    Leader,
    Follower,
    Reconfiguring,
}

/// Instrumentation emitted whenever a leader computes a vote: the
/// transactions whose payloads fed `f_s` (`committed`) and `g_s` (`prepared`).
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct VoteRecord {
    pub shard: ShardId,
    pub epoch: Epoch,
    pub k: Slot,
    pub t: TxnId,
    pub vote: Decision,
    pub committed: Vec<TxnId>,
    pub prepared: Vec<TxnId>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Effect {
    Send {
        to: NodeId,
        msg: Message,
    },
    /// One-sided write into `to`'s buffer for this sender.
    SendRdma {
        to: Pid,
        msg: Message,
    },
    /// Grant `peer` write access to this process's memory.
    Open(Pid),
    Close(Pid),
    Vote(VoteRecord),
    /// A reconfiguration attempt gave up (lost swap or no membership).
    ReconfigAbandoned {
        reason: String,
    },
}

impl Effect {
    pub fn send(to: impl Into<NodeId>, msg: Message) -> Effect {
        Effect::Send { to: to.into(), msg }
    }
}

/// Outcome of offering a message to a process.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Handled {
    Done(Vec<Effect>),
    /// Guard false for now; keep the message and offer it again later.
    Defer,
    /// Guard false forever (or the message is meaningless here).
    Drop,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TxnInfo {
    pub payload: Payload,
    pub shards: BTreeSet<ShardId>,
    pub client: NodeId,
}

/// `t → (payload, shards(t), client(t))`, filled in at certify time.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Registry {
    txns: BTreeMap<TxnId, TxnInfo>,
}

impl Registry {
    pub fn register(&mut self, t: TxnId, info: TxnInfo) {
        self.txns.insert(t, info);
    }
    pub fn get(&self, t: TxnId) -> Option<&TxnInfo> {
        self.txns.get(&t)
    }
    pub fn shards(&self, t: TxnId) -> BTreeSet<ShardId> {
        self.get(t).map(|i| i.shards.clone()).unwrap_or_default()
    }
    pub fn iter(&self) -> impl Iterator<Item = (&TxnId, &TxnInfo)> {
        self.txns.iter()
    }
}

/// Static knowledge available to every transition.
pub struct Ctx<'a> {
    pub map: &'a ShardMap,
    pub registry: &'a Registry,
    pub certifier: &'a dyn Certifier,
    /// Fresh processes reserved per shard.
    pub spares: &'a BTreeMap<ShardId, Vec<Pid>>,
    /// Target configuration size per shard.
    pub replicas: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum MembershipError {
    #[error("new leader {0} did not respond to probing")]
    LeaderNotResponder(Pid),
    #[error("need {need} members but only {have} are available")]
    PoolExhausted { need: usize, have: usize },
}

/// Responders first (leader included), then fresh processes, up to
/// `target_size`. Never returns a smaller set.
pub fn compute_membership(
    responders: &BTreeSet<Pid>,
    new_leader: Pid,
    pool: &BTreeSet<Pid>,
    target_size: usize,
) -> Result<BTreeSet<Pid>, MembershipError> {
    if !responders.contains(&new_leader) {
        return Err(MembershipError::LeaderNotResponder(new_leader));
    }
    let mut out = BTreeSet::from([new_leader]);
    for p in responders.iter().chain(pool.iter()) {
        if out.len() >= target_size {
            break;
        }
        out.insert(*p);
    }
    if out.len() < target_size {
        return Err(MembershipError::PoolExhausted { need: target_size, have: out.len() });
    }
    Ok(out)
}

/// A leader's vote for `t` at slot `k`, computed against the slots below
/// `k`: `f_s` over decided-commit payloads and `g_s` over prepared-commit
/// ones. A missing payload (retry) prepares the transaction as aborted.
pub fn compute_vote(
    log: &Log,
    k: Slot,
    shard: ShardId,
    epoch: Epoch,
    t: TxnId,
    l: Option<&Payload>,
    ctx: &Ctx,
) -> (LogEntry, VoteRecord) {
    let mut committed = Vec::new();
    let mut prepared = Vec::new();
    for en in log.range(..k).map(|(_, en)| en) {
        match (en.phase, en.dec) {
            (Phase::Decided, Some(Decision::Commit)) => committed.push(en),
            (Phase::Prepared, _) if en.vote == Decision::Commit => prepared.push(en),
            _ => {}
        }
    }
    let (vote, payload) = match l {
        Some(l) => {
            let l1: Vec<&Payload> = committed.iter().map(|e| &e.payload).collect();
            let l2: Vec<&Payload> = prepared.iter().map(|e| &e.payload).collect();
            let v = ctx
                .certifier
                .committed_local(shard, ctx.map, &l1, l)
                .meet(ctx.certifier.prepared_local(shard, ctx.map, &l2, l));
            (v, l.clone())
        }
        None => (Decision::Abort, Payload::empty()),
    };
    let record = VoteRecord {
        shard,
        epoch,
        k,
        t,
        vote,
        committed: committed.iter().map(|e| e.txn).collect(),
        prepared: prepared.iter().map(|e| e.txn).collect(),
    };
    (LogEntry { txn: t, payload, vote, dec: None, phase: Phase::Prepared, vote_epoch: epoch }, record)
}

/// What a coordinator knows about one transaction in one `(shard, epoch)`.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ShardProgress {
    /// `(k, d)` from a PREPARE_ACK handled at this epoch.
    pub prepared: Option<(Slot, Decision)>,
    /// Followers the ACCEPT went to.
    pub targets: BTreeSet<Pid>,
    /// Per follower, the `(k, d)` it acknowledged.
    pub acks: BTreeMap<Pid, (Slot, Decision)>,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CoordTxn {
    pub progress: BTreeMap<(ShardId, Epoch), ShardProgress>,
    pub decided: Option<Decision>,
}

impl CoordTxn {
    /// `(k_s, d_s)` once every expected follower acked the same slot at
    /// `epoch`; vacuous (PREPARE_ACK alone) when there are no followers.
    pub fn shard_ready(&self, s: ShardId, epoch: Epoch, followers: &BTreeSet<Pid>) -> Option<(Slot, Decision)> {
        let pr = self.progress.get(&(s, epoch))?;
        let (k, d) = pr.prepared?;
        followers.iter().all(|f| pr.acks.get(f) == Some(&(k, d))).then_some((k, d))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn set(ns: &[u32]) -> BTreeSet<Pid> {
        ns.iter().map(|n| Pid(*n)).collect()
    }

    #[test]
    fn membership_prefers_responders() {
        assert_eq!(compute_membership(&set(&[2, 3]), Pid(2), &set(&[9]), 2).unwrap(), set(&[2, 3]));
    }

    #[test]
    fn membership_tops_up_from_pool() {
        assert_eq!(compute_membership(&set(&[2]), Pid(2), &set(&[5, 6]), 2).unwrap(), set(&[2, 5]));
    }

    #[test]
    fn membership_never_shrinks() {
        assert_eq!(
            compute_membership(&set(&[2]), Pid(2), &set(&[]), 3),
            Err(MembershipError::PoolExhausted { need: 3, have: 1 })
        );
        assert_eq!(
            compute_membership(&set(&[3]), Pid(2), &set(&[5]), 2),
            Err(MembershipError::LeaderNotResponder(Pid(2)))
        );
    }

    #[test]
    fn shard_ready_requires_matching_acks() {
        let mut c = CoordTxn::default();
        let f = set(&[2]);
        assert_eq!(c.shard_ready(ShardId(1), 1, &f), None);
        let pr = c.progress.entry((ShardId(1), 1)).or_default();
        pr.prepared = Some((1, Decision::Commit));
        assert_eq!(c.shard_ready(ShardId(1), 1, &BTreeSet::new()), Some((1, Decision::Commit)));
        assert_eq!(c.shard_ready(ShardId(1), 1, &f), None);
        c.progress.get_mut(&(ShardId(1), 1)).unwrap().acks.insert(Pid(2), (1, Decision::Commit));
        assert_eq!(c.shard_ready(ShardId(1), 1, &f), Some((1, Decision::Commit)));
        assert_eq!(c.shard_ready(ShardId(1), 2, &f), None);
    }
}
