//! Simulated one-sided RDMA messaging.
//!
//! A write leaves the sender's NIC, lands in the receiver's per-sender
//! circular buffer one hop later, and the receiver's NIC acknowledges it one
//! hop after that. The receiver's CPU sees the message only when it pulls.
//! Access control is checked when the write lands: a closed buffer rejects it
//! silently and the sender never gets an ack. A full buffer stalls the write
//! until the receiver pulls.
//!
//! Each opening of a buffer is a new connection. A write belongs to the
//! connection current when it was posted, so one still in flight across a
//! close and reopen is rejected rather than landing in the new connection.

use std::collections::{BTreeMap, VecDeque};

use serde::{Deserialize, Serialize};

use crate::ids::Pid;
use crate::message::Message;

pub const DEFAULT_CAPACITY: usize = 64;

/// A write in the network or in memory, tagged with the sender-side id the
/// simulator uses to link causes.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Write {
    pub id: u64,
    pub msg: Message,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct RdmaBuffer {
    pub open: bool,
    /// Incremented on every reopening.
    pub generation: u64,
    /// Landed, not yet pulled. Every entry here has been (or is being) acked.
    pub entries: VecDeque<Write>,
}

/// An RDMA-level event the scheduler may pick.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum RdmaEvent {
    Land { sender: Pid, receiver: Pid },
    Ack { sender: Pid, receiver: Pid },
    Pull { receiver: Pid, sender: Pid },
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Landing {
    Accepted(Write),
    Rejected(Write),
    /// Receiver buffer full; the write stays at the head of the link.
    Blocked,
    Nothing,
}

#[derive(Clone, Debug)]
pub struct RdmaNet {
    pub capacity: usize,
    /// When false every buffer behaves as permanently open.
    pub access_control: bool,
    buffers: BTreeMap<(Pid, Pid), RdmaBuffer>,
    /// Writes tagged with the receiver buffer's generation at posting time.
    in_flight: BTreeMap<(Pid, Pid), VecDeque<(u64, Write)>>,
    acks: BTreeMap<(Pid, Pid), VecDeque<Write>>,
}

impl RdmaNet {
    pub fn new(capacity: usize, access_control: bool) -> RdmaNet {
        RdmaNet {
            capacity,
            access_control,
            buffers: BTreeMap::new(),
            in_flight: BTreeMap::new(),
            acks: BTreeMap::new(),
        }
    }

    /// `owner` grants `peer` write access. Entries landed on an earlier
    /// connection were acked and stay deliverable.
    pub fn open(&mut self, owner: Pid, peer: Pid) {
        let b = self.buffers.entry((owner, peer)).or_default();
        if !b.open {
            b.open = true;
            b.generation += 1;
        }
    }

    /// Landed entries stay pullable after a close.
    pub fn close(&mut self, owner: Pid, peer: Pid) {
        if let Some(b) = self.buffers.get_mut(&(owner, peer)) {
            b.open = false;
        } else if owner == peer {
            self.buffers.insert((owner, owner), RdmaBuffer::default());
        }
    }

    pub fn is_open(&self, owner: Pid, peer: Pid) -> bool {
        // A loopback is open until its owner first closes it.
        !self.access_control || self.buffers.get(&(owner, peer)).map_or(owner == peer, |b| b.open)
    }

    pub fn send(&mut self, sender: Pid, receiver: Pid, w: Write) {
        let g = self.generation(receiver, sender);
        self.in_flight.entry((sender, receiver)).or_default().push_back((g, w));
    }

    fn generation(&self, owner: Pid, peer: Pid) -> u64 {
        self.buffers.get(&(owner, peer)).map_or(0, |b| b.generation)
    }

    /// Would a write posted at generation `g` be refused right now?
    fn refuses(&self, owner: Pid, peer: Pid, g: u64) -> bool {
        !self.is_open(owner, peer) || (self.access_control && g != self.generation(owner, peer))
    }

    fn buffer_full(&self, owner: Pid, peer: Pid) -> bool {
        self.buffers.get(&(owner, peer)).is_some_and(|b| b.entries.len() >= self.capacity)
    }

    /// Head of the `sender → receiver` link reaches the receiver's memory.
    pub fn land(&mut self, sender: Pid, receiver: Pid) -> Landing {
        let Some(&(g, _)) = self.in_flight.get(&(sender, receiver)).and_then(VecDeque::front) else {
            return Landing::Nothing;
        };
        if self.refuses(receiver, sender, g) {
            let (_, w) = self.in_flight.get_mut(&(sender, receiver)).and_then(VecDeque::pop_front).expect("non-empty");
            return Landing::Rejected(w);
        }
        if self.buffer_full(receiver, sender) {
            return Landing::Blocked;
        }
        let (_, w) = self.in_flight.get_mut(&(sender, receiver)).and_then(VecDeque::pop_front).expect("non-empty");
        self.buffers
            .entry((receiver, sender))
            .or_insert_with(|| RdmaBuffer { open: true, ..RdmaBuffer::default() })
            .entries
            .push_back(w.clone());
        self.acks.entry((sender, receiver)).or_default().push_back(w.clone());
        Landing::Accepted(w)
    }

    /// The NIC acknowledgement reaches the sender.
    pub fn ack(&mut self, sender: Pid, receiver: Pid) -> Option<Write> {
        self.acks.get_mut(&(sender, receiver)).and_then(VecDeque::pop_front)
    }

    /// The receiver's CPU consumes the oldest entry written by `sender`.
    pub fn pull(&mut self, receiver: Pid, sender: Pid) -> Option<Write> {
        self.buffers.get_mut(&(receiver, sender)).and_then(|b| b.entries.pop_front())
    }

    /// Every landed entry, senders in id order, FIFO within a sender.
    pub fn flush(&mut self, receiver: Pid) -> Vec<(Pid, Write)> {
        let mut out = Vec::new();
        for ((owner, sender), b) in self.buffers.iter_mut() {
            if *owner == receiver {
                out.extend(b.entries.drain(..).map(|w| (*sender, w)));
            }
        }
        out
    }

    /// The receiver's memory and everything headed for it are gone.
    pub fn crash(&mut self, p: Pid) {
        self.buffers.retain(|(owner, _), _| *owner != p);
        self.in_flight.retain(|(_, receiver), _| *receiver != p);
        self.acks.retain(|(sender, _), _| *sender != p);
    }

    /// Events that could fire now. Landing is offered even when the target
    /// buffer is full only if it would be rejected.
    pub fn enabled(&self) -> Vec<RdmaEvent> {
        let mut out = Vec::new();
        for ((sender, receiver), q) in &self.in_flight {
            let Some((g, _)) = q.front() else { continue };
            if self.refuses(*receiver, *sender, *g) || !self.buffer_full(*receiver, *sender) {
                out.push(RdmaEvent::Land { sender: *sender, receiver: *receiver });
            }
        }
        for ((sender, receiver), q) in &self.acks {
            if !q.is_empty() {
                out.push(RdmaEvent::Ack { sender: *sender, receiver: *receiver });
            }
        }
        for ((receiver, sender), b) in &self.buffers {
            if !b.entries.is_empty() {
                out.push(RdmaEvent::Pull { receiver: *receiver, sender: *sender });
            }
        }
        out
    }

    /// Oldest write id behind an event, for age-based scheduling.
    pub fn event_id(&self, ev: RdmaEvent) -> Option<u64> {
        match ev {
            RdmaEvent::Land { sender, receiver } => self.in_flight.get(&(sender, receiver))?.front().map(|(_, w)| w.id),
            RdmaEvent::Ack { sender, receiver } => self.acks.get(&(sender, receiver))?.front().map(|w| w.id),
            RdmaEvent::Pull { receiver, sender } => {
                self.buffers.get(&(receiver, sender))?.entries.front().map(|w| w.id)
            }
        }
    }

    pub fn is_idle(&self) -> bool {
        self.enabled().is_empty() && self.in_flight.values().all(VecDeque::is_empty)
    }

    /// Landed-but-unpulled entries at `receiver`.
    pub fn pending(&self, receiver: Pid) -> usize {
        self.buffers.iter().filter(|((o, _), _)| *o == receiver).map(|(_, b)| b.entries.len()).sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn w(id: u64) -> Write {
        Write { id, msg: Message::Probe { e: id } }
    }

    #[test]
    fn open_send_land_ack_pull() {
        let mut n = RdmaNet::new(4, true);
        n.open(Pid(2), Pid(1));
        n.send(Pid(1), Pid(2), w(1));
        assert_eq!(n.land(Pid(1), Pid(2)), Landing::Accepted(w(1)));
        assert_eq!(n.ack(Pid(1), Pid(2)), Some(w(1)));
        assert_eq!(n.pull(Pid(2), Pid(1)), Some(w(1)));
        assert!(n.is_idle());
    }

    #[test]
    fn closed_buffer_rejects_without_ack() {
        let mut n = RdmaNet::new(4, true);
        n.open(Pid(2), Pid(1));
        n.close(Pid(2), Pid(1));
        n.close(Pid(2), Pid(1));
        n.send(Pid(1), Pid(2), w(1));
        assert_eq!(n.land(Pid(1), Pid(2)), Landing::Rejected(w(1)));
        assert_eq!(n.ack(Pid(1), Pid(2)), None);
    }

    #[test]
    fn landed_entry_survives_close() {
        let mut n = RdmaNet::new(4, true);
        n.open(Pid(2), Pid(1));
        n.send(Pid(1), Pid(2), w(1));
        n.land(Pid(1), Pid(2));
        n.close(Pid(2), Pid(1));
        assert_eq!(n.flush(Pid(2)), vec![(Pid(1), w(1))]);
        assert_eq!(n.pending(Pid(2)), 0);
    }

    #[test]
    fn full_buffer_blocks_until_pull() {
        let mut n = RdmaNet::new(1, true);
        n.open(Pid(2), Pid(1));
        n.send(Pid(1), Pid(2), w(1));
        n.send(Pid(1), Pid(2), w(2));
        n.land(Pid(1), Pid(2));
        assert_eq!(n.land(Pid(1), Pid(2)), Landing::Blocked);
        assert!(!n.enabled().contains(&RdmaEvent::Land { sender: Pid(1), receiver: Pid(2) }));
        n.pull(Pid(2), Pid(1));
        assert_eq!(n.land(Pid(1), Pid(2)), Landing::Accepted(w(2)));
    }

    #[test]
    fn fifo_per_sender() {
        let mut n = RdmaNet::new(8, false);
        for i in 1..=3 {
            n.send(Pid(1), Pid(2), w(i));
            n.land(Pid(1), Pid(2));
        }
        let got: Vec<u64> = std::iter::from_fn(|| n.pull(Pid(2), Pid(1))).map(|w| w.id).collect();
        assert_eq!(got, vec![1, 2, 3]);
    }

    #[test]
    fn reopen_keeps_acked_entries_and_crash_destroys_memory() {
        let mut n = RdmaNet::new(4, true);
        n.open(Pid(2), Pid(1));
        n.send(Pid(1), Pid(2), w(1));
        n.land(Pid(1), Pid(2));
        n.close(Pid(2), Pid(1));
        n.open(Pid(2), Pid(1));
        assert_eq!(n.pull(Pid(2), Pid(1)), Some(w(1)));
        n.send(Pid(1), Pid(2), w(2));
        n.land(Pid(1), Pid(2));
        n.crash(Pid(2));
        assert_eq!(n.pending(Pid(2)), 0);
    }

    #[test]
    fn write_from_an_old_connection_is_rejected_after_reopen() {
        let mut n = RdmaNet::new(4, true);
        n.open(Pid(2), Pid(1));
        n.send(Pid(1), Pid(2), w(1));
        n.close(Pid(2), Pid(1));
        n.open(Pid(2), Pid(1));
        n.send(Pid(1), Pid(2), w(2));
        assert_eq!(n.land(Pid(1), Pid(2)), Landing::Rejected(w(1)));
        assert_eq!(n.land(Pid(1), Pid(2)), Landing::Accepted(w(2)));
    }

    #[test]
    fn loopback_is_open_until_closed() {
        let mut n = RdmaNet::new(4, true);
        assert!(n.is_open(Pid(1), Pid(1)));
        n.send(Pid(1), Pid(1), w(1));
        n.close(Pid(1), Pid(1));
        n.send(Pid(1), Pid(1), w(2));
        assert_eq!(n.land(Pid(1), Pid(1)), Landing::Rejected(w(1)));
        assert_eq!(n.land(Pid(1), Pid(1)), Landing::Rejected(w(2)));
        n.open(Pid(1), Pid(1));
        n.send(Pid(1), Pid(1), w(3));
        assert_eq!(n.land(Pid(1), Pid(1)), Landing::Accepted(w(3)));
    }

    #[test]
    fn without_access_control_stale_writes_land() {
        let mut n = RdmaNet::new(4, false);
        n.open(Pid(2), Pid(1));
        n.send(Pid(1), Pid(2), w(1));
        n.close(Pid(2), Pid(1));
        n.open(Pid(2), Pid(1));
        assert_eq!(n.land(Pid(1), Pid(2)), Landing::Accepted(w(1)));
    }
}
