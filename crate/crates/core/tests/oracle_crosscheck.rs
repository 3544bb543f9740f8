//! `check_correct` against an exhaustive search over permutations, on random
//! histories with at most six committed transactions.

use itertools::Itertools;
use proptest::collection::vec;
use proptest::prelude::*;
use rcommit::certification::certify_global;
use rcommit::checkers::{check_correct, Action, History, Verdict};
use rcommit::{Decision, ObjectId, Payload, Serializability, TxnId};

#[derive(Clone, Debug)]
struct Txn {
    payload: Payload,
    decision: Option<Decision>,
}

fn txn() -> impl Strategy<Value = Txn> {
    let d = prop_oneof![3 => Just(Some(Decision::Commit)), 1 => Just(Some(Decision::Abort)), 1 => Just(None)];
    ((1u32..=3, 0u64..3, any::<bool>()), (1u32..=3, 0u64..3, any::<bool>()), d).prop_map(
        |((x1, v1, w1), (x2, v2, w2), decision)| {
            let mut p = Payload::empty();
            for (x, v, w) in [(x1, v1, w1), (x2, v2, w2)] {
                p.reads.insert(ObjectId(x), v);
                if w {
                    p.writes.insert(ObjectId(x), format!("w{x}"));
                }
            }
            p.commit_version = p.reads.values().max().unwrap() + 1;
            Txn { payload: p, decision }
        },
    )
}

/// Transactions plus an interleaving: the i-th occurrence of a transaction
/// index in `order` is its certify, the second its decide.
fn history() -> impl Strategy<Value = (Vec<Txn>, History)> {
    vec(txn(), 1..=6)
        .prop_flat_map(|ts| {
            let tokens: Vec<usize> = (0..ts.len()).flat_map(|i| [i, i]).collect();
            (Just(ts), Just(tokens).prop_shuffle())
        })
        .prop_map(|(ts, order)| {
            let mut h = History::default();
            let mut seen = vec![false; ts.len()];
            for i in order {
                let t = TxnId(i as u32 + 1);
                if !seen[i] {
                    seen[i] = true;
                    h.push(Action::Certify { t, payload: ts[i].payload.clone() });
                } else if let Some(d) = ts[i].decision {
                    h.push(Action::Decide { t, d });
                }
            }
            (ts, h)
        })
}

type Decided = Vec<(TxnId, usize, Decision)>;

/// Positions of each transaction's certify and decide in `h`.
fn positions(h: &History) -> (Vec<(TxnId, usize)>, Decided) {
    let mut cert = Vec::new();
    let mut dec = Vec::new();
    for (i, (_, a)) in h.actions.iter().enumerate() {
        match a {
            Action::Certify { t, .. } => cert.push((*t, i)),
            Action::Decide { t, d } => dec.push((*t, i, *d)),
        }
    }
    (cert, dec)
}

fn legal(order: &[TxnId], ts: &[Txn], h: &History) -> bool {
    let (cert, dec) = positions(h);
    let at = |t: TxnId, list: &[(TxnId, usize)]| list.iter().find(|(t2, _)| *t2 == t).map(|(_, i)| *i);
    let decided_at: Vec<(TxnId, usize)> = dec.iter().map(|(t, i, _)| (*t, *i)).collect();
    for (i, t) in order.iter().enumerate() {
        // A committed transaction decided before t was certified must come first.
        for t2 in order[i + 1..].iter() {
            if at(*t2, &decided_at).unwrap() < at(*t, &cert).unwrap() {
                return false;
            }
        }
        let before: Vec<&Payload> = order[..i].iter().map(|t2| &ts[t2.0 as usize - 1].payload).collect();
        if certify_global(&before, &ts[t.0 as usize - 1].payload) != Decision::Commit {
            return false;
        }
    }
    true
}

fn oracle(ts: &[Txn], h: &History) -> bool {
    let (_, dec) = positions(h);
    let committed: Vec<TxnId> = dec.iter().filter(|(_, _, d)| *d == Decision::Commit).map(|(t, _, _)| *t).collect();
    let n = committed.len();
    committed.into_iter().permutations(n).any(|order| legal(&order, ts, h))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(10_000))]

    #[test]
    fn subset_search_agrees_with_permutations((ts, h) in history()) {
        let expected = oracle(&ts, &h);
        match check_correct(&h, &Serializability, 10) {
            Verdict::Correct(order) => {
                prop_assert!(expected, "oracle found no legal order");
                prop_assert!(legal(&order, &ts, &h), "witness {:?} is not legal", order);
            }
            Verdict::Incorrect(why) => prop_assert!(!expected, "oracle found a legal order; checker said {}", why),
            Verdict::Skipped { .. } => prop_assert!(false, "six transactions are within the bound"),
        }
    }
}

#[test]
fn above_the_bound_is_skipped() {
    let mut h = History::default();
    for i in 1..=4 {
        let t = TxnId(i);
        let p = Payload { reads: [(ObjectId(i), 0)].into(), writes: Default::default(), commit_version: 1 };
        h.push(Action::Certify { t, payload: p });
        h.push(Action::Decide { t, d: Decision::Commit });
    }
    assert_eq!(check_correct(&h, &Serializability, 3), Verdict::Skipped { committed: 4, bound: 3 });
    assert!(matches!(check_correct(&h, &Serializability, 4), Verdict::Correct(_)));
}
