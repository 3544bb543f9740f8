//! RDMA channel properties under random operation sequences.

use std::collections::{BTreeMap, BTreeSet};

use proptest::collection::vec;
use proptest::prelude::*;
use rcommit::rdma_channel::{Landing, RdmaEvent, RdmaNet, Write};
use rcommit::{Message, Pid};

#[derive(Clone, Copy, Debug)]
enum Op {
    Send(u32, u32),
    Land(u32, u32),
    Ack(u32, u32),
    Pull(u32, u32),
    Open(u32, u32),
    Close(u32, u32),
    Flush(u32),
}

fn pid() -> impl Strategy<Value = u32> {
    1u32..=3
}

fn op() -> impl Strategy<Value = Op> {
    prop_oneof![
        4 => (pid(), pid()).prop_map(|(a, b)| Op::Send(a, b)),
        3 => (pid(), pid()).prop_map(|(a, b)| Op::Land(a, b)),
        2 => (pid(), pid()).prop_map(|(a, b)| Op::Ack(a, b)),
        2 => (pid(), pid()).prop_map(|(a, b)| Op::Pull(a, b)),
        1 => (pid(), pid()).prop_map(|(a, b)| Op::Open(a, b)),
        1 => (pid(), pid()).prop_map(|(a, b)| Op::Close(a, b)),
        1 => pid().prop_map(Op::Flush),
    ]
}

#[derive(Default)]
struct Log {
    /// Per (sender, receiver), ids in the order the receiver consumed them.
    consumed: BTreeMap<(Pid, Pid), Vec<u64>>,
    landed: BTreeSet<u64>,
    rejected: BTreeSet<u64>,
    acked: BTreeSet<u64>,
}

impl Log {
    fn consume(&mut self, sender: Pid, receiver: Pid, w: Write) {
        self.consumed.entry((sender, receiver)).or_default().push(w.id);
    }
}

fn step(n: &mut RdmaNet, log: &mut Log, op: Op, next_id: &mut u64) -> Result<(), TestCaseError> {
    match op {
        Op::Send(a, b) => {
            *next_id += 1;
            n.send(Pid(a), Pid(b), Write { id: *next_id, msg: Message::Probe { e: *next_id } });
        }
        Op::Land(a, b) => match n.land(Pid(a), Pid(b)) {
            Landing::Accepted(w) => {
                log.landed.insert(w.id);
            }
            Landing::Rejected(w) => {
                log.rejected.insert(w.id);
            }
            Landing::Blocked | Landing::Nothing => {}
        },
        Op::Ack(a, b) => {
            if let Some(w) = n.ack(Pid(a), Pid(b)) {
                prop_assert!(log.landed.contains(&w.id), "ack for write {} that never landed", w.id);
                log.acked.insert(w.id);
            }
        }
        Op::Pull(r, s) => {
            if let Some(w) = n.pull(Pid(r), Pid(s)) {
                log.consume(Pid(s), Pid(r), w);
            }
        }
        Op::Open(o, p) => n.open(Pid(o), Pid(p)),
        Op::Close(o, p) => n.close(Pid(o), Pid(p)),
        Op::Flush(r) => {
            for (s, w) in n.flush(Pid(r)) {
                log.consume(s, Pid(r), w);
            }
            prop_assert_eq!(n.pending(Pid(r)), 0);
        }
    }
    Ok(())
}

/// Fires enabled events until none is left.
fn drain(n: &mut RdmaNet, log: &mut Log, next_id: &mut u64) -> Result<(), TestCaseError> {
    for _ in 0..10_000 {
        let Some(ev) = n.enabled().first().copied() else { return Ok(()) };
        let op = match ev {
            RdmaEvent::Land { sender, receiver } => Op::Land(sender.0, receiver.0),
            RdmaEvent::Ack { sender, receiver } => Op::Ack(sender.0, receiver.0),
            RdmaEvent::Pull { receiver, sender } => Op::Pull(receiver.0, sender.0),
        };
        step(n, log, op, next_id)?;
    }
    prop_assert!(false, "channel did not drain");
    Ok(())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(2_000))]

    #[test]
    fn fifo_flush_and_ack_implies_delivery(ops in vec(op(), 0..60), capacity in 1usize..4, access in any::<bool>()) {
        let mut n = RdmaNet::new(capacity, access);
        for a in 1..=3 {
            for b in 1..=3 {
                n.open(Pid(a), Pid(b));
            }
        }
        let mut log = Log::default();
        let mut next_id = 0;
        for op in ops {
            step(&mut n, &mut log, op, &mut next_id)?;
        }
        drain(&mut n, &mut log, &mut next_id)?;

        for ids in log.consumed.values() {
            prop_assert!(ids.windows(2).all(|w| w[0] < w[1]), "out of order: {:?}", ids);
        }
        let consumed: BTreeSet<u64> = log.consumed.values().flatten().copied().collect();
        prop_assert!(log.acked.is_subset(&consumed), "acked but never delivered");
        prop_assert_eq!(&log.acked, &log.landed, "every landing is eventually acked");
        prop_assert!(log.rejected.is_disjoint(&log.acked));
        if !access {
            prop_assert!(log.rejected.is_empty());
        }
    }
}
