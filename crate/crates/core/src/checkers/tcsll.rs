//! The low-level vote constraints, checked on an assignment read off a trace.
//!
//! Positions, payloads and per-shard votes come from accepted slots: a slot
//! `k` every follower of some epoch acknowledged for `t` gives
//! `pos_s[t] = k`. The provenance sets `T_s[t]` and `P_s[t]` are the ones
//! the leader actually used when it computed the vote, so the existential
//! constraints become plain checks. A prepared transaction whose slot was
//! later lost has either no position or one above `pos_s[t]` (it was
//! prepared again after reconfiguration); it is left out of `P_s[t]`. That
//! only removes conflicts from `g_s`, so the vote bound stays sound.

use std::collections::{BTreeMap, BTreeSet};

use petgraph::algo::tarjan_scc;
use petgraph::graphmap::DiGraphMap;
use serde::Serialize;

use super::history::History;
use super::invariants::walk;
use super::{CheckError, Setup, Violation};
use crate::certification::{project, Certifier, Decision, Payload};
use crate::ids::{Epoch, ShardId, Slot, TxnId};
use crate::process::VoteRecord;
use crate::simulator::trace::{Record, Trace};

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Local {
    pub pos: Slot,
    pub pload: Payload,
    pub d: Decision,
    /// `T_s[t]`.
    pub committed: BTreeSet<TxnId>,
    /// `P_s[t]`.
    pub prepared: BTreeSet<TxnId>,
    /// Entry where the slot became accepted.
    pub at: usize,
    /// Whether a vote record backs `committed` and `prepared`.
    pub recorded: bool,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct Assignment {
    pub history: History,
    pub shards: BTreeMap<TxnId, BTreeSet<ShardId>>,
    pub local: BTreeMap<(ShardId, TxnId), Local>,
}

impl Assignment {
    pub fn extract(trace: &Trace, setup: &Setup) -> Result<Assignment, CheckError> {
        let facts = walk(trace, setup);
        let mut votes: BTreeMap<(ShardId, Epoch, Slot, TxnId), &VoteRecord> = BTreeMap::new();
        let mut shards = BTreeMap::new();
        for (_, r) in trace.records() {
            match r {
                Record::Vote { vote, .. } => {
                    votes.entry((vote.shard, vote.epoch, vote.k, vote.t)).or_insert(vote);
                }
                Record::Invoke { t, shards: ss, .. } => {
                    shards.insert(*t, ss.iter().copied().collect());
                }
                _ => {}
            }
        }
        let mut local = BTreeMap::new();
        for a in &facts.accepted {
            let v = votes.get(&(a.s, a.vote_epoch, a.k, a.t));
            local.entry((a.s, a.t)).or_insert_with(|| Local {
                pos: a.k,
                pload: a.l.clone(),
                d: a.d,
                committed: v.map(|v| v.committed.iter().copied().collect()).unwrap_or_default(),
                prepared: v.map(|v| v.prepared.iter().copied().collect()).unwrap_or_default(),
                at: a.at,
                recorded: v.is_some(),
            });
        }
        let pos: BTreeMap<(ShardId, TxnId), Slot> = local.iter().map(|(k, l)| (*k, l.pos)).collect();
        for ((s, _), l) in local.iter_mut() {
            l.prepared.retain(|t2| pos.get(&(*s, *t2)).is_some_and(|p| *p < l.pos));
        }
        Ok(Assignment { history: History::from_trace(trace), shards, local })
    }

    fn pos(&self, s: ShardId, t: TxnId) -> Option<Slot> {
        self.local.get(&(s, t)).map(|l| l.pos)
    }
}

pub fn check_tcsll(a: &Assignment, setup: &Setup, f: &dyn Certifier) -> Vec<Violation> {
    let mut out = Vec::new();
    let mut fail = |c: &str, detail: String, w: Vec<usize>| out.push(Violation::new(format!("tcsll:{c}"), detail, w));
    let certified = a.history.certified();
    let decided = a.history.decided();
    let entry = |pos: usize| a.history.actions[pos].0;
    let d = |t: &TxnId| decided.get(t).map(|(_, d)| *d);

    for (t, (dpos, dt)) in &decided {
        let ss = a.shards.get(t).cloned().unwrap_or_default();
        let mut parts = Vec::new();
        for s in &ss {
            match a.local.get(&(*s, *t)) {
                Some(l) => parts.push((l.d, l.at)),
                None => fail("decision", format!("{t} decided but has no accepted vote on {s}"), vec![entry(*dpos)]),
            }
        }
        if parts.len() == ss.len() && Decision::meet_all(parts.iter().map(|p| p.0)) != *dt {
            let mut w: Vec<usize> = parts.iter().map(|p| p.1).collect();
            w.push(entry(*dpos));
            fail("decision", format!("{t} decided {dt} but its shard votes meet differently"), w);
        }
    }

    let mut by_pos: BTreeMap<(ShardId, Slot), (TxnId, usize)> = BTreeMap::new();
    for ((s, t), l) in &a.local {
        if let Some((t0, at)) = by_pos.insert((*s, l.pos), (*t, l.at)) {
            fail("unique-pos", format!("{t0} and {t} share position {} on {s}", l.pos), vec![at, l.at]);
        }
    }

    for ((s, t), l) in &a.local {
        let (s, t) = (*s, *t);
        let Some((cpos, payload)) = certified.get(&t) else {
            fail("payload", format!("{t} has a position on {s} but was never certified"), vec![l.at]);
            continue;
        };
        let ls = project(payload, s, &setup.map);
        let ok = match l.d {
            Decision::Commit => l.pload == ls,
            Decision::Abort => l.pload == ls || l.pload.is_empty(),
        };
        if !ok {
            fail(
                "payload",
                format!("{t} on {s}: payload is neither its projection nor empty"),
                vec![entry(*cpos), l.at],
            );
        }
        if !l.recorded {
            fail("provenance", format!("{t} on {s}: no vote record for slot {}", l.pos), vec![l.at]);
            continue;
        }

        let earlier = |pred: &dyn Fn(TxnId, &Local) -> bool| -> BTreeSet<TxnId> {
            a.local
                .iter()
                .filter(|((s2, t2), l2)| *s2 == s && l2.pos < l.pos && pred(*t2, l2))
                .map(|((_, t2), _)| *t2)
                .collect()
        };
        let expect_t: BTreeSet<TxnId> =
            earlier(&|t2, _| d(&t2) == Some(Decision::Commit)).difference(&l.prepared).copied().collect();
        if expect_t != l.committed {
            fail("committed-set", format!("{t} on {s}: T = {:?}, expected {:?}", l.committed, expect_t), vec![l.at]);
        }
        let allowed_p = earlier(&|_, l2| l2.d == Decision::Commit);
        if !l.prepared.is_subset(&allowed_p) {
            fail("prepared-set", format!("{t} on {s}: P = {:?} exceeds {:?}", l.prepared, allowed_p), vec![l.at]);
        }

        let pl = |ts: &BTreeSet<TxnId>| -> Vec<&Payload> {
            ts.iter().filter_map(|t2| a.local.get(&(s, *t2))).map(|l2| &l2.pload).collect()
        };
        let bound = f.committed_local(s, &setup.map, &pl(&l.committed), &l.pload).meet(f.prepared_local(
            s,
            &setup.map,
            &pl(&l.prepared),
            &l.pload,
        ));
        if !l.d.below(bound) {
            fail("vote-bound", format!("{t} on {s}: vote {} exceeds f_s ⊓ g_s = {bound}", l.d), vec![l.at]);
        }
    }

    let rt = a.history.real_time();
    for (t2, t) in &rt {
        let (Some(s2), Some(s1)) = (a.shards.get(t2), a.shards.get(t)) else { continue };
        for s in s2.intersection(s1) {
            if let (Some(p2), Some(p1)) = (a.pos(*s, *t2), a.pos(*s, *t)) {
                if p2 >= p1 {
                    let w = vec![a.local[&(*s, *t2)].at, a.local[&(*s, *t)].at];
                    fail("real-time", format!("{t2} precedes {t} in real time but not on {s} ({p2} >= {p1})"), w);
                }
            }
        }
    }

    let mut g: DiGraphMap<TxnId, ()> = DiGraphMap::new();
    for t in certified.keys() {
        g.add_node(*t);
    }
    for (t2, t) in &rt {
        g.add_edge(*t2, *t, ());
    }
    for ((s, t), l) in &a.local {
        for t2 in &l.committed {
            g.add_edge(*t2, *t, ());
        }
        for ((s2, t2), l2) in &a.local {
            if s2 == s
                && l2.pos < l.pos
                && l2.d == Decision::Commit
                && d(t2) == Some(Decision::Abort)
                && !l.prepared.contains(t2)
            {
                g.add_edge(*t2, *t, ());
            }
        }
    }
    for scc in tarjan_scc(&g) {
        let cyclic = scc.len() > 1 || g.contains_edge(scc[0], scc[0]);
        if cyclic {
            let w = scc.iter().filter_map(|t| certified.get(t)).map(|(p, _)| entry(*p)).collect();
            let names: Vec<String> = scc.iter().map(ToString::to_string).collect();
            fail("acyclic", format!("real-time and decision order form a cycle through {}", names.join(", ")), w);
        }
    }
    out
}
