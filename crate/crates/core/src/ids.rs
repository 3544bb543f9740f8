//! Identifiers shared by every layer.
//!
//! All of them render as a one-letter prefix followed by a number (`p3`,
//! `s1`, `t7`, `x12`, `c4`) and parse back from the same form, which is what
//! scenario files and traces use.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

/// Epoch numbers; the bootstrap configuration has epoch 1.
pub type Epoch = u64;

/// Commit and read versions.
pub type Version = u64;

/// Certification-order position inside a shard log. 1-indexed; 0 means "none".
pub type Slot = u64;

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
#[error("cannot parse {text:?} as {what}")]
pub struct IdParseError {
    pub what: &'static str,
    pub text: String,
}

macro_rules! prefixed_id {
    ($name:ident, $prefix:literal, $what:literal) => {
        #[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
        #[serde(into = "String", try_from = "String")]
        pub struct $name(pub u32);

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                write!(f, concat!($prefix, "{}"), self.0)
            }
        }

        impl fmt::Debug for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                fmt::Display::fmt(self, f)
            }
        }

        impl FromStr for $name {
            type Err = IdParseError;
            fn from_str(s: &str) -> Result<Self, Self::Err> {
                s.strip_prefix($prefix)
                    .and_then(|n| n.parse().ok())
                    .map($name)
                    .ok_or_else(|| IdParseError { what: $what, text: s.to_string() })
            }
        }

        impl From<$name> for String {
            fn from(v: $name) -> String {
                v.to_string()
            }
        }

        impl TryFrom<String> for $name {
            type Error = IdParseError;
            fn try_from(s: String) -> Result<Self, Self::Error> {
                s.parse()
            }
        }
    };
}

prefixed_id!(Pid, "p", "process id");
prefixed_id!(ShardId, "s", "shard id");
prefixed_id!(TxnId, "t", "transaction id");
prefixed_id!(ObjectId, "x", "object id");
prefixed_id!(ClientId, "c", "client id");

/// Any addressable participant of a simulation.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub enum NodeId {
    Process(Pid),
    Client(ClientId),
    /// The configuration service.
    Cs,
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            NodeId::Process(p) => p.fmt(f),
            NodeId::Client(c) => c.fmt(f),
            NodeId::Cs => f.write_str("cs"),
        }
    }
}

impl fmt::Debug for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(self, f)
    }
}

impl FromStr for NodeId {
    type Err = IdParseError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s == "cs" {
            return Ok(NodeId::Cs);
        }
        if let Ok(p) = s.parse() {
            return Ok(NodeId::Process(p));
        }
        s.parse().map(NodeId::Client).map_err(|_| IdParseError { what: "node id", text: s.to_string() })
    }
}

impl From<NodeId> for String {
    fn from(v: NodeId) -> String {
        v.to_string()
    }
}

impl TryFrom<String> for NodeId {
    type Error = IdParseError;
    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

impl From<Pid> for NodeId {
    fn from(p: Pid) -> Self {
        NodeId::Process(p)
    }
}

impl From<ClientId> for NodeId {
    fn from(c: ClientId) -> Self {
        NodeId::Client(c)
    }
}

impl NodeId {
    pub fn pid(self) -> Option<Pid> {
        match self {
            NodeId::Process(p) => Some(p),
            _ => None,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ids_round_trip_through_text() {
        assert_eq!("p12".parse::<Pid>().unwrap(), Pid(12));
        assert_eq!(Pid(3).to_string(), "p3");
        assert_eq!("cs".parse::<NodeId>().unwrap(), NodeId::Cs);
        assert_eq!("c4".parse::<NodeId>().unwrap(), NodeId::Client(ClientId(4)));
        assert!("q1".parse::<Pid>().is_err());
        let json = serde_json::to_string(&NodeId::Process(Pid(7))).unwrap();
        assert_eq!(json, "\"p7\"");
        assert_eq!(serde_json::from_str::<NodeId>(&json).unwrap(), NodeId::Process(Pid(7)));
    }
}
