//! Engine properties over generated crash and reconfiguration scenarios.

use std::collections::{BTreeMap, BTreeSet};

use proptest::prelude::*;
use rcommit::simulator::fuzz::{scenario, FuzzConfig};
use rcommit::simulator::{run, Model, Record, Trace};
use rcommit::{NodeId, Pid};

fn model() -> impl Strategy<Value = Model> {
    prop_oneof![Just(Model::Mp), Just(Model::Rdma), Just(Model::NaiveRdma)]
}

fn trace(model: Model, seed: u64) -> (Trace, bool) {
    let r = run(&scenario(&FuzzConfig { model, ..FuzzConfig::default() }, seed)).unwrap();
    (r.trace, r.exhausted)
}

/// Send ids per ordered pair, in the order the channel released them.
fn released(tr: &Trace) -> BTreeMap<(NodeId, NodeId), Vec<u64>> {
    let mut seen = BTreeSet::new();
    let mut out: BTreeMap<(NodeId, NodeId), Vec<u64>> = BTreeMap::new();
    for (_, r) in tr.records() {
        let (id, src, dst) = match r {
            Record::Deliver { id, src, dst }
            | Record::Defer { id, src, dst }
            | Record::Drop { id, src, dst }
            | Record::Lost { id, src, dst } => (*id, *src, *dst),
            _ => continue,
        };
        if seen.insert(id) {
            out.entry((src, dst)).or_default().push(id);
        }
    }
    out
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn same_seed_same_trace(m in model(), seed in any::<u64>()) {
        prop_assert_eq!(trace(m, seed).0.to_text(), trace(m, seed).0.to_text());
    }

    #[test]
    fn channels_are_fifo_and_reliable(m in model(), seed in 0u64..100_000) {
        let (tr, exhausted) = trace(m, seed);
        let out = released(&tr);
        for ids in out.values() {
            prop_assert!(ids.windows(2).all(|w| w[0] < w[1]), "out of order: {:?}", ids);
        }
        if !exhausted {
            let gone: BTreeSet<u64> = out.values().flatten().copied().collect();
            for (_, r) in tr.records() {
                if let Record::Send { id, .. } = r {
                    prop_assert!(gone.contains(id), "message {} never left its channel", id);
                }
            }
        }
    }

    #[test]
    fn epochs_never_decrease(m in model(), seed in 0u64..100_000) {
        let (tr, _) = trace(m, seed);
        let mut last: BTreeMap<Pid, (u64, u64)> = BTreeMap::new();
        for (_, r) in tr.records() {
            let Record::State { p, state } = r else { continue };
            if let Some((e, ne)) = last.get(p) {
                prop_assert!(state.epoch >= *e && state.new_epoch >= *ne, "{} went from ({}, {}) to ({}, {})", p, e, ne, state.epoch, state.new_epoch);
            }
            prop_assert!(state.epoch <= state.new_epoch, "{} has epoch above new_epoch", p);
            last.insert(*p, (state.epoch, state.new_epoch));
        }
    }
}
