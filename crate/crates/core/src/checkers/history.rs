//! Client-visible histories and the legal-linearization check.

use std::collections::{BTreeMap, BTreeSet};

use serde::Serialize;

use crate::certification::{Certifier, Decision, Payload};
use crate::ids::TxnId;
use crate::message::Message;
use crate::simulator::trace::{Record, Trace};

pub const DEFAULT_ORACLE_BOUND: usize = 10;

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub enum Action {
    Certify { t: TxnId, payload: Payload },
    Decide { t: TxnId, d: Decision },
}

impl Action {
    pub fn txn(&self) -> TxnId {
        match self {
            Action::Certify { t, .. } | Action::Decide { t, .. } => *t,
        }
    }
}

/// Actions in trace order. Each entry keeps the index of the trace entry it
/// came from.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct History {
    pub actions: Vec<(usize, Action)>,
}

impl History {
    /// `certify` is the invocation; `decide` is the first DECISION_CLIENT
    /// sent for the transaction. Later duplicates are not actions.
    pub fn from_trace(trace: &Trace) -> History {
        let mut decided = BTreeSet::new();
        let mut actions = Vec::new();
        for (i, e) in trace.entries.iter().enumerate() {
            match &e.record {
                Record::Invoke { t, payload, .. } => {
                    actions.push((i, Action::Certify { t: *t, payload: payload.clone() }));
                }
                Record::Send { msg: Message::DecisionClient { t, d }, .. } if decided.insert(*t) => {
                    actions.push((i, Action::Decide { t: *t, d: *d }));
                }
                _ => {}
            }
        }
        History { actions }
    }

    pub fn push(&mut self, a: Action) {
        let i = self.actions.len();
        self.actions.push((i, a));
    }

    pub fn certified(&self) -> BTreeMap<TxnId, (usize, &Payload)> {
        let mut out = BTreeMap::new();
        for (pos, (_, a)) in self.actions.iter().enumerate() {
            if let Action::Certify { t, payload } = a {
                out.entry(*t).or_insert((pos, payload));
            }
        }
        out
    }

    pub fn decided(&self) -> BTreeMap<TxnId, (usize, Decision)> {
        let mut out = BTreeMap::new();
        for (pos, (_, a)) in self.actions.iter().enumerate() {
            if let Action::Decide { t, d } = a {
                out.entry(*t).or_insert((pos, *d));
            }
        }
        out
    }

    /// At most one `certify` per transaction, and every `decide` answers an
    /// earlier `certify`.
    pub fn well_formed(&self) -> Result<(), String> {
        let mut certified = BTreeSet::new();
        let mut decided = BTreeSet::new();
        for (_, a) in &self.actions {
            match a {
                Action::Certify { t, .. } if !certified.insert(*t) => return Err(format!("{t} certified twice")),
                Action::Decide { t, .. } if !certified.contains(t) => {
                    return Err(format!("{t} decided before it was certified"))
                }
                Action::Decide { t, .. } if !decided.insert(*t) => return Err(format!("{t} decided twice")),
                _ => {}
            }
        }
        Ok(())
    }

    /// `t' ≺rt t`: `decide(t')` precedes `certify(t)`.
    pub fn real_time(&self) -> BTreeSet<(TxnId, TxnId)> {
        let certified = self.certified();
        let mut out = BTreeSet::new();
        for (t2, (dpos, _)) in self.decided() {
            for (t, (cpos, _)) in &certified {
                if dpos < *cpos {
                    out.insert((t2, *t));
                }
            }
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub enum Verdict {
    /// A witness: the committed transactions in a legal order.
    Correct(Vec<TxnId>),
    Incorrect(String),
    Skipped {
        committed: usize,
        bound: usize,
    },
}

impl Verdict {
    pub fn is_violation(&self) -> bool {
        matches!(self, Verdict::Incorrect(_))
    }
}

/// Does `h | committed(h)` have a legal linearization under `f`?
///
/// A linearization keeps every real-time edge among committed transactions,
/// and is legal when each transaction commits against the set placed before
/// it. Only that set matters, not its order, so the search runs over subsets
/// of the committed transactions rather than permutations.
pub fn check_correct(h: &History, f: &dyn Certifier, bound: usize) -> Verdict {
    if let Err(e) = h.well_formed() {
        return Verdict::Incorrect(format!("malformed history: {e}"));
    }
    let certified = h.certified();
    let committed: Vec<TxnId> =
        h.decided().into_iter().filter(|(_, (_, d))| *d == Decision::Commit).map(|(t, _)| t).collect();
    let n = committed.len();
    if n > bound || n >= usize::BITS as usize {
        return Verdict::Skipped { committed: n, bound };
    }
    let payload: Vec<&Payload> = committed.iter().map(|t| certified[t].1).collect();
    let rt = h.real_time();
    let pred: Vec<usize> = committed
        .iter()
        .map(|t| {
            committed.iter().enumerate().filter(|(_, t2)| rt.contains(&(**t2, *t))).fold(0, |m, (j, _)| m | 1 << j)
        })
        .collect();

    let full = (1usize << n) - 1;
    // `parent[mask]` is the transaction appended last on some legal path to
    // `mask`; `None` means unreached.
    let mut parent: Vec<Option<usize>> = vec![None; 1 << n];
    let mut reached = vec![false; 1 << n];
    reached[0] = true;
    for mask in 0..=full {
        if !reached[mask] {
            continue;
        }
        let before: Vec<&Payload> = (0..n).filter(|j| mask & 1 << j != 0).map(|j| payload[j]).collect();
        for i in 0..n {
            let next = mask | 1 << i;
            if mask & 1 << i != 0 || reached[next] || pred[i] & !mask != 0 {
                continue;
            }
            if f.global(&before, payload[i]) == Decision::Commit {
                reached[next] = true;
                parent[next] = Some(i);
            }
        }
    }
    if !reached[full] {
        return Verdict::Incorrect(format!(
            "no legal linearization of the {n} committed transactions {}",
            committed.iter().map(ToString::to_string).collect::<Vec<_>>().join(", ")
        ));
    }
    let mut order = Vec::with_capacity(n);
    let mut mask = full;
    while let Some(i) = parent[mask] {
        order.push(committed[i]);
        mask &= !(1 << i);
    }
    order.reverse();
    Verdict::Correct(order)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::certification::Serializability;
    use crate::ids::ObjectId;

    fn rw(x: u32, read: u64, vc: u64) -> Payload {
        Payload {
            reads: [(ObjectId(x), read)].into(),
            writes: [(ObjectId(x), "v".to_string())].into(),
            commit_version: vc,
        }
    }

    #[test]
    fn single_commit_is_correct() {
        let mut h = History::default();
        h.push(Action::Certify { t: TxnId(1), payload: rw(1, 0, 1) });
        h.push(Action::Decide { t: TxnId(1), d: Decision::Commit });
        assert_eq!(check_correct(&h, &Serializability, 10), Verdict::Correct(vec![TxnId(1)]));
    }

    #[test]
    fn two_writers_of_the_same_version_conflict() {
        let mut h = History::default();
        h.push(Action::Certify { t: TxnId(1), payload: rw(1, 0, 1) });
        h.push(Action::Certify { t: TxnId(2), payload: rw(1, 0, 2) });
        h.push(Action::Decide { t: TxnId(1), d: Decision::Commit });
        h.push(Action::Decide { t: TxnId(2), d: Decision::Commit });
        assert!(check_correct(&h, &Serializability, 10).is_violation());
    }

    #[test]
    fn real_time_order_is_respected() {
        // t2 read the version t1 wrote; only t1 before t2 is legal, and the
        // real-time order forces t2 first.
        let mut h = History::default();
        h.push(Action::Certify { t: TxnId(2), payload: rw(1, 1, 2) });
        h.push(Action::Decide { t: TxnId(2), d: Decision::Commit });
        h.push(Action::Certify { t: TxnId(1), payload: rw(1, 0, 1) });
        h.push(Action::Decide { t: TxnId(1), d: Decision::Commit });
        assert!(check_correct(&h, &Serializability, 10).is_violation());
    }

    #[test]
    fn aborts_and_undecided_are_ignored_and_bound_skips() {
        let mut h = History::default();
        h.push(Action::Certify { t: TxnId(1), payload: rw(1, 0, 1) });
        h.push(Action::Certify { t: TxnId(2), payload: rw(1, 0, 2) });
        h.push(Action::Decide { t: TxnId(2), d: Decision::Abort });
        h.push(Action::Certify { t: TxnId(3), payload: rw(1, 0, 3) });
        h.push(Action::Decide { t: TxnId(3), d: Decision::Commit });
        assert_eq!(check_correct(&h, &Serializability, 10), Verdict::Correct(vec![TxnId(3)]));
        assert_eq!(check_correct(&h, &Serializability, 0), Verdict::Skipped { committed: 1, bound: 0 });
    }

    #[test]
    fn malformed_histories_are_rejected() {
        let mut h = History::default();
        h.push(Action::Decide { t: TxnId(1), d: Decision::Commit });
        assert!(h.well_formed().is_err());
        assert!(check_correct(&h, &Serializability, 10).is_violation());
    }
}
