//! Line-oriented execution traces.
//!
//! ```text
//! #! rcommit-trace v1
//! <step>\t<kind>\t<src>\t<dst>\t<digest>\t<record json>
//! ```
//!
//! The first record is always `META`, carrying the scenario so a trace is
//! self-describing. The digest is the first 16 hex digits of the SHA-256 of
//! the JSON column; replay verifies it.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::certification::{Decision, Payload};
use crate::ids::{ClientId, Epoch, NodeId, Pid, ShardId, Slot, TxnId};
use crate::message::{CsConfig, CsKey, Message};
use crate::process::VoteRecord;
use crate::protocol_mp::Snapshot;
use crate::simulator::scenario::Scenario;

pub const TRACE_HEADER: &str = "#! rcommit-trace v1";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Record {
    Meta {
        scenario: Scenario,
        seed: u64,
    },
    Invoke {
        t: TxnId,
        coordinator: Pid,
        client: ClientId,
        host: Option<Pid>,
        payload: Payload,
        shards: Vec<ShardId>,
    },
    Send {
        id: u64,
        src: NodeId,
        dst: NodeId,
        msg: Message,
        cause: Option<u64>,
    },
    Deliver {
        id: u64,
        src: NodeId,
        dst: NodeId,
    },
    /// Guard false for now; the message is parked at `dst`.
    Defer {
        id: u64,
        src: NodeId,
        dst: NodeId,
    },
    Drop {
        id: u64,
        src: NodeId,
        dst: NodeId,
    },
    /// Discarded because `dst` crashed.
    Lost {
        id: u64,
        src: NodeId,
        dst: NodeId,
    },
    RdmaWrite {
        id: u64,
        src: Pid,
        dst: Pid,
        msg: Message,
        cause: Option<u64>,
    },
    RdmaLand {
        id: u64,
        src: Pid,
        dst: Pid,
        accepted: bool,
    },
    RdmaAck {
        id: u64,
        write: u64,
        src: Pid,
        dst: Pid,
    },
    RdmaDeliver {
        id: u64,
        src: Pid,
        dst: Pid,
        flush: bool,
    },
    Open {
        owner: Pid,
        peer: Pid,
    },
    Close {
        owner: Pid,
        peer: Pid,
    },
    Crash {
        p: Pid,
    },
    Reconfigure {
        p: Pid,
        shard: Option<ShardId>,
    },
    Retry {
        p: Pid,
        k: Slot,
        t: TxnId,
    },
    /// A scripted command whose precondition was false.
    Skipped {
        p: Option<Pid>,
        what: String,
    },
    Vote {
        p: Pid,
        vote: VoteRecord,
    },
    State {
        p: Pid,
        state: Snapshot,
    },
    Cas {
        key: CsKey,
        expected: Epoch,
        cfg: CsConfig,
        ok: bool,
    },
    ClientDecision {
        t: TxnId,
        client: ClientId,
        d: Decision,
    },
    Block {
        src: String,
        dst: String,
        on: bool,
    },
    Abandoned {
        p: Pid,
        reason: String,
    },
}

impl Record {
    pub fn kind(&self) -> &'static str {
        match self {
            Record::Meta { .. } => "META",
            Record::Invoke { .. } => "INVOKE",
            Record::Send { .. } => "SEND",
            Record::Deliver { .. } => "DELIVER",
            Record::Defer { .. } => "DEFER",
            Record::Drop { .. } => "DROP",
            Record::Lost { .. } => "LOST",
            Record::RdmaWrite { .. } => "RDMA_WRITE",
            Record::RdmaLand { .. } => "RDMA_LAND",
            Record::RdmaAck { .. } => "RDMA_ACK",
            Record::RdmaDeliver { .. } => "RDMA_DELIVER",
            Record::Open { .. } => "OPEN",
            Record::Close { .. } => "CLOSE",
            Record::Crash { .. } => "CRASH",
            Record::Reconfigure { .. } => "RECONFIGURE",
            Record::Retry { .. } => "RETRY",
            Record::Skipped { .. } => "SKIPPED",
            Record::Vote { .. } => "VOTE",
            Record::State { .. } => "STATE",
            Record::Cas { .. } => "CAS",
            Record::ClientDecision { .. } => "CLIENT_DECISION",
            Record::Block { .. } => "BLOCK",
            Record::Abandoned { .. } => "ABANDONED",
        }
    }

    fn endpoints(&self) -> (String, String) {
        let n = |x: &dyn std::fmt::Display| x.to_string();
        match self {
            Record::Send { src, dst, .. }
            | Record::Deliver { src, dst, .. }
            | Record::Defer { src, dst, .. }
            | Record::Drop { src, dst, .. }
            | Record::Lost { src, dst, .. } => (n(src), n(dst)),
            Record::RdmaWrite { src, dst, .. }
            | Record::RdmaLand { src, dst, .. }
            | Record::RdmaAck { src, dst, .. }
            | Record::RdmaDeliver { src, dst, .. } => (n(src), n(dst)),
            Record::Open { owner, peer } | Record::Close { owner, peer } => (n(owner), n(peer)),
            Record::Invoke { coordinator, client, .. } => (n(client), n(coordinator)),
            Record::Crash { p }
            | Record::Reconfigure { p, .. }
            | Record::Retry { p, .. }
            | Record::Vote { p, .. }
            | Record::State { p, .. }
            | Record::Abandoned { p, .. } => (n(p), "-".into()),
            Record::Cas { .. } => ("cs".into(), "-".into()),
            Record::ClientDecision { client, .. } => (n(client), "-".into()),
            Record::Block { src, dst, .. } => (src.clone(), dst.clone()),
            Record::Meta { .. } | Record::Skipped { .. } => ("-".into(), "-".into()),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Entry {
    pub step: u64,
    pub record: Record,
}

impl Entry {
    /// The entry as one trace line, without the trailing newline.
    pub fn line(&self) -> String {
        let json = serde_json::to_string(&self.record).expect("records serialize");
        let (src, dst) = self.record.endpoints();
        format!("{}\t{}\t{}\t{}\t{}\t{}", self.step, self.record.kind(), src, dst, digest(&json), json)
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Trace {
    pub entries: Vec<Entry>,
}

#[derive(Debug, thiserror::Error)]
pub enum TraceError {
    #[error("missing or unsupported trace header (expected {TRACE_HEADER:?})")]
    Version,
    #[error("line {line}: {msg}")]
    Line { line: usize, msg: String },
}

/// A line whose digest column does not match its JSON.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DigestMismatch {
    pub line: usize,
    pub expected: String,
    pub found: String,
}

pub fn digest(json: &str) -> String {
    hex::encode(&Sha256::digest(json.as_bytes())[..8])
}

impl Trace {
    pub fn push(&mut self, step: u64, record: Record) {
        self.entries.push(Entry { step, record });
    }

    pub fn records(&self) -> impl Iterator<Item = (u64, &Record)> {
        self.entries.iter().map(|e| (e.step, &e.record))
    }

    pub fn scenario(&self) -> Option<(&Scenario, u64)> {
        self.entries.iter().find_map(|e| match &e.record {
            Record::Meta { scenario, seed } => Some((scenario, *seed)),
            _ => None,
        })
    }

    pub fn to_text(&self) -> String {
        let mut out = String::with_capacity(self.entries.len() * 160);
        out.push_str(TRACE_HEADER);
        out.push('\n');
        for e in &self.entries {
            let _ = writeln!(out, "{}", e.line());
        }
        out
    }

    /// Parses a trace. Digest mismatches are reported, not fatal, so a
    /// tampered trace can still be checked.
    pub fn parse(text: &str) -> Result<(Trace, Vec<DigestMismatch>), TraceError> {
        let mut lines = text.lines().enumerate();
        match lines.next() {
            Some((_, h)) if h.trim() == TRACE_HEADER => {}
            _ => return Err(TraceError::Version),
        }
        let mut trace = Trace::default();
        let mut bad = Vec::new();
        for (i, line) in lines {
            if line.trim().is_empty() {
                continue;
            }
            let err = |msg: String| TraceError::Line { line: i + 1, msg };
            let cols: Vec<&str> = line.splitn(6, '\t').collect();
            let [step, _kind, _src, _dst, dig, json] = cols.as_slice() else {
                return Err(err("expected 6 tab-separated columns".into()));
            };
            let step: u64 = step.parse().map_err(|_| err(format!("bad step {step:?}")))?;
            let record: Record = serde_json::from_str(json).map_err(|e| err(e.to_string()))?;
            let found = digest(json);
            if found != *dig {
                bad.push(DigestMismatch { line: i + 1, expected: dig.to_string(), found });
            }
            trace.push(step, record);
        }
        Ok((trace, bad))
    }

    /// Every message sent, by id.
    pub fn sends(&self) -> BTreeMap<u64, (u64, NodeId, NodeId, &Message)> {
        let mut out = BTreeMap::new();
        for (step, r) in self.records() {
            match r {
                Record::Send { id, src, dst, msg, .. } => {
                    out.insert(*id, (step, *src, *dst, msg));
                }
                Record::RdmaWrite { id, src, dst, msg, .. } => {
                    out.insert(*id, (step, NodeId::Process(*src), NodeId::Process(*dst), msg));
                }
                _ => {}
            }
        }
        out
    }
}

/// Per-transaction message delays from invocation to the client learning the
/// decision: the longest chain of hops through messages about `t`, where a
/// hop between a process and itself or between a client and its host is free.
pub fn count_delays(trace: &Trace, t: TxnId) -> Option<u64> {
    let mut hosts: BTreeMap<ClientId, Pid> = BTreeMap::new();
    let mut clock: BTreeMap<NodeId, u64> = BTreeMap::new();
    let mut depth: BTreeMap<u64, u64> = BTreeMap::new();
    let mut invoked = false;
    let about_t = |m: &Message| match m {
        Message::Prepare { t: x, .. }
        | Message::PrepareAck { t: x, .. }
        | Message::Accept { t: x, .. }
        | Message::AcceptAck { t: x, .. }
        | Message::DecisionClient { t: x, .. } => *x == t,
        _ => false,
    };
    let weight = |hosts: &BTreeMap<ClientId, Pid>, a: NodeId, b: NodeId| -> u64 {
        let colocated = |c: NodeId, p: NodeId| matches!((c, p), (NodeId::Client(c), NodeId::Process(p)) if hosts.get(&c) == Some(&p));
        u64::from(!(a == b || colocated(a, b) || colocated(b, a)))
    };
    let sends = trace.sends();
    for (_, r) in trace.records() {
        match r {
            Record::Invoke { t: x, coordinator, client, host, .. } if *x == t => {
                if let Some(h) = host {
                    hosts.insert(*client, *h);
                }
                clock.insert(NodeId::Process(*coordinator), 0);
                invoked = true;
            }
            Record::Send { id, src, dst, msg, .. } if invoked && about_t(msg) => {
                let d = clock.get(src).copied().unwrap_or(0) + weight(&hosts, *src, *dst);
                depth.insert(*id, d);
            }
            Record::RdmaWrite { id, src, dst, msg, .. } if invoked && about_t(msg) => {
                let (s, d) = (NodeId::Process(*src), NodeId::Process(*dst));
                depth.insert(*id, clock.get(&s).copied().unwrap_or(0) + weight(&hosts, s, d));
            }
            Record::Deliver { id, dst, .. } => {
                if let Some(d) = depth.get(id) {
                    let c = clock.entry(*dst).or_insert(0);
                    *c = (*c).max(*d);
                    if let Some((_, _, _, Message::DecisionClient { .. })) = sends.get(id) {
                        return Some(*d);
                    }
                }
            }
            Record::RdmaAck { write, src, dst, .. } => {
                if let Some(d) = depth.get(write) {
                    let (s, r) = (NodeId::Process(*src), NodeId::Process(*dst));
                    let c = clock.entry(s).or_insert(0);
                    *c = (*c).max(*d + weight(&hosts, r, s));
                }
            }
            _ => {}
        }
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn text_round_trip_and_digest_check() {
        let mut tr = Trace::default();
        tr.push(0, Record::Crash { p: Pid(3) });
        tr.push(
            2,
            Record::Send {
                id: 1,
                src: NodeId::Cs,
                dst: NodeId::Process(Pid(1)),
                msg: Message::Probe { e: 2 },
                cause: None,
            },
        );
        let text = tr.to_text();
        let (back, bad) = Trace::parse(&text).unwrap();
        assert_eq!(back, tr);
        assert!(bad.is_empty());
        let tampered = text.replace("\"e\":2", "\"e\":3");
        let (_, bad) = Trace::parse(&tampered).unwrap();
        assert_eq!(bad.len(), 1);
        assert!(matches!(Trace::parse("nope"), Err(TraceError::Version)));
    }

    #[test]
    fn every_builtin_trace_round_trips() {
        use crate::simulator::{builtin, run, Model};
        for name in builtin::NAMES {
            for model in [Model::Mp, Model::Rdma, Model::NaiveRdma] {
                let Some(sc) = builtin::with_model(name, model) else { continue };
                let Ok(r) = run(&sc) else { continue };
                let text = r.trace.to_text();
                let (back, bad) = Trace::parse(&text).unwrap_or_else(|e| panic!("{name} {model}: {e}"));
                assert!(bad.is_empty());
                assert_eq!(back.to_text(), text, "{name} {model}");
            }
        }
    }
}
