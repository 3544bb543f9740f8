//! Wire messages and the replicated log they manipulate.
//!
//! One enum covers both protocol variants plus configuration-service traffic
//! so that traces and checkers have a single vocabulary. Fields named
//! `vote_epoch` are instrumentation: they record the epoch in which the vote
//! carried by the message was first computed and never influence a guard.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use serde_with::DisplayFromStr;

use crate::certification::{Decision, Payload};
use crate::config_service::{GlobalConfig, ShardConfig};
use crate::ids::{Epoch, Pid, ShardId, Slot, TxnId};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Start,
    Prepared,
    Decided,
}

/// A populated log slot. Holes (phase START) are simply absent from [`Log`].
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LogEntry {
    pub txn: TxnId,
    pub payload: Payload,
    pub vote: Decision,
    pub dec: Option<Decision>,
    pub phase: Phase,
    pub vote_epoch: Epoch,
}

/// Sparse 1-indexed certification order.
pub type Log = BTreeMap<Slot, LogEntry>;

pub fn log_phase(log: &Log, k: Slot) -> Phase {
    log.get(&k).map_or(Phase::Start, |e| e.phase)
}

/// `max{k | phase[k] ≠ START}`, 0 for an empty log.
pub fn log_length(log: &Log) -> Slot {
    log.keys().next_back().copied().unwrap_or(0)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum CsKey {
    Shard(ShardId),
    Global,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum CsConfig {
    Shard(ShardConfig),
    Global(GlobalConfig),
}

impl CsConfig {
    pub fn epoch(&self) -> Epoch {
        match self {
            CsConfig::Shard(c) => c.epoch,
            CsConfig::Global(c) => c.epoch,
        }
    }
}

// Slot keys are written as JSON strings; inside an internally tagged enum
// serde cannot turn them back into integers without help.
#[serde_with::serde_as]
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Message {
    Prepare {
        t: TxnId,
        payload: Option<Payload>,
    },
    PrepareAck {
        e: Epoch,
        s: ShardId,
        k: Slot,
        t: TxnId,
        payload: Payload,
        vote: Decision,
        vote_epoch: Epoch,
    },
    /// In the global-epoch variant `e` is not read by the receiver; it is the
    /// epoch of the PREPARE_ACK the coordinator forwarded.
    Accept {
        e: Epoch,
        k: Slot,
        t: TxnId,
        payload: Payload,
        vote: Decision,
        vote_epoch: Epoch,
    },
    AcceptAck {
        s: ShardId,
        e: Epoch,
        k: Slot,
        t: TxnId,
        vote: Decision,
    },
    DecisionClient {
        t: TxnId,
        d: Decision,
    },
    /// In the global-epoch variant `e` is the coordinator's epoch, not read
    /// by the receiver.
    Decision {
        e: Epoch,
        k: Slot,
        d: Decision,
    },
    Probe {
        e: Epoch,
    },
    ProbeAck {
        initialized: bool,
        e: Epoch,
        s: ShardId,
    },
    NewConfig {
        e: Epoch,
        members: BTreeSet<Pid>,
    },
    NewState {
        e: Epoch,
        members: BTreeSet<Pid>,
        #[serde_as(as = "BTreeMap<DisplayFromStr, _>")]
        log: Log,
    },
    ConfigChange {
        s: ShardId,
        e: Epoch,
        members: BTreeSet<Pid>,
        leader: Pid,
    },
    ConfigPrepare {
        e: Epoch,
        members: BTreeMap<ShardId, BTreeSet<Pid>>,
        leaders: BTreeMap<ShardId, Pid>,
    },
    ConfigPrepareAck {
        e: Epoch,
    },
    NewConfigGlobal {
        e: Epoch,
    },
    NewStateGlobal {
        e: Epoch,
        #[serde_as(as = "BTreeMap<DisplayFromStr, _>")]
        log: Log,
    },
    Connect {
        e: Epoch,
    },
    ConnectAck {
        e: Epoch,
    },
    CsGetLast {
        req: u64,
        key: CsKey,
    },
    CsGet {
        req: u64,
        key: CsKey,
        e: Epoch,
    },
    CsCas {
        req: u64,
        key: CsKey,
        expected: Epoch,
        cfg: CsConfig,
    },
    /// `cfg` is `None` when the requested epoch does not exist. `used` lists
    /// every process that ever appeared in a configuration of the key.
    CsReply {
        req: u64,
        cfg: Option<CsConfig>,
        used: BTreeSet<Pid>,
    },
    CsCasReply {
        req: u64,
        ok: bool,
    },
}

impl Message {
    pub fn kind(&self) -> &'static str {
        match self {
            Message::Prepare { .. } => "PREPARE",
            Message::PrepareAck { .. } => "PREPARE_ACK",
            Message::Accept { .. } => "ACCEPT",
            Message::AcceptAck { .. } => "ACCEPT_ACK",
            Message::DecisionClient { .. } => "DECISION_CLIENT",
            Message::Decision { .. } => "DECISION",
            Message::Probe { .. } => "PROBE",
            Message::ProbeAck { .. } => "PROBE_ACK",
            Message::NewConfig { .. } => "NEW_CONFIG",
            Message::NewState { .. } => "NEW_STATE",
            Message::ConfigChange { .. } => "CONFIG_CHANGE",
            Message::ConfigPrepare { .. } => "CONFIG_PREPARE",
            Message::ConfigPrepareAck { .. } => "CONFIG_PREPARE_ACK",
            Message::NewConfigGlobal { .. } => "NEW_CONFIG",
            Message::NewStateGlobal { .. } => "NEW_STATE",
            Message::Connect { .. } => "CONNECT",
            Message::ConnectAck { .. } => "CONNECT_ACK",
            Message::CsGetLast { .. } => "CS_GET_LAST",
            Message::CsGet { .. } => "CS_GET",
            Message::CsCas { .. } => "CS_CAS",
            Message::CsReply { .. } => "CS_REPLY",
            Message::CsCasReply { .. } => "CS_CAS_REPLY",
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn log_length_ignores_holes() {
        let mut log = Log::new();
        assert_eq!(log_length(&log), 0);
        let entry = LogEntry {
            txn: TxnId(1),
            payload: Payload::empty(),
            vote: Decision::Abort,
            dec: None,
            phase: Phase::Prepared,
            vote_epoch: 1,
        };
        log.insert(3, entry);
        assert_eq!(log_length(&log), 3);
        assert_eq!(log_phase(&log, 2), Phase::Start);
        assert_eq!(log_phase(&log, 3), Phase::Prepared);
    }

    #[test]
    fn messages_serialize_with_kind_tag() {
        let m = Message::Probe { e: 4 };
        let j = serde_json::to_string(&m).unwrap();
        assert_eq!(j, r#"{"kind":"PROBE","e":4}"#);
        assert_eq!(serde_json::from_str::<Message>(&j).unwrap(), m);
    }
}
