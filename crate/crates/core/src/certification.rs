//! Payloads, the commit/abort lattice and the certification functions.
//!
//! The global function `f` decides a transaction against everything that
//! committed before it. Shards only see their own objects, so each shard runs
//! `f_s` against locally committed payloads and the stricter `g_s` against
//! payloads that are prepared to commit but not yet decided.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::ids::{ObjectId, ShardId, Version};

#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Decision {
    Commit,
    Abort,
}

impl Decision {
    /// `⊓`: ABORT absorbs, COMMIT is the identity.
    pub fn meet(self, other: Decision) -> Decision {
        if self == Decision::Abort || other == Decision::Abort {
            Decision::Abort
        } else {
            Decision::Commit
        }
    }

    /// `x ⊑ y` iff `x = y` or `x = ABORT, y = COMMIT`.
    pub fn below(self, other: Decision) -> bool {
        self == other || (self == Decision::Abort && other == Decision::Commit)
    }

    pub fn meet_all<I: IntoIterator<Item = Decision>>(it: I) -> Decision {
        it.into_iter().fold(Decision::Commit, Decision::meet)
    }
}

impl fmt::Debug for Decision {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Decision::Commit => "COMMIT",
            Decision::Abort => "ABORT",
        })
    }
}

impl fmt::Display for Decision {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

pub fn meet(d1: Decision, d2: Decision) -> Decision {
    d1.meet(d2)
}

/// Opaque written value; only equality matters.
pub type Value = String;

/// `⟨R, W, V_c⟩`. Maps keep at most one entry per object by construction.
#[derive(Clone, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Payload {
    pub reads: BTreeMap<ObjectId, Version>,
    pub writes: BTreeMap<ObjectId, Value>,
    pub commit_version: Version,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum PayloadError {
    #[error("{0} is written but not read")]
    BlindWrite(ObjectId),
    #[error("commit version {commit} does not exceed read version {read} of {obj}")]
    StaleCommitVersion { obj: ObjectId, read: Version, commit: Version },
}

impl Payload {
    /// The distinguished empty payload `ε`.
    pub fn empty() -> Payload {
        Payload::default()
    }

    pub fn is_empty(&self) -> bool {
        self.reads.is_empty() && self.writes.is_empty()
    }

    pub fn validate(&self) -> Result<(), PayloadError> {
        for x in self.writes.keys() {
            if !self.reads.contains_key(x) {
                return Err(PayloadError::BlindWrite(*x));
            }
        }
        for (x, v) in &self.reads {
            if self.commit_version <= *v {
                return Err(PayloadError::StaleCommitVersion { obj: *x, read: *v, commit: self.commit_version });
            }
        }
        Ok(())
    }

    pub fn objects(&self) -> impl Iterator<Item = ObjectId> + '_ {
        // writes ⊆ reads for valid payloads, but stay total on invalid ones.
        self.reads.keys().chain(self.writes.keys().filter(|x| !self.reads.contains_key(x))).copied()
    }
}

/// Object ownership. Objects absent from the map belong to no shard and are
/// therefore invisible to every shard-local function.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ShardMap {
    owner: BTreeMap<ObjectId, ShardId>,
}

impl ShardMap {
    pub fn new() -> ShardMap {
        ShardMap::default()
    }

    /// Shards `s1..=sN`, each owning `per_shard` consecutive objects starting
    /// at `x((s-1)*per_shard + 1)`.
    pub fn striped(shards: u32, per_shard: u32) -> ShardMap {
        let mut m = ShardMap::new();
        for s in 1..=shards {
            for i in 0..per_shard {
                m.assign(ObjectId((s - 1) * per_shard + i + 1), ShardId(s));
            }
        }
        m
    }

    pub fn assign(&mut self, x: ObjectId, s: ShardId) {
        self.owner.insert(x, s);
    }

    pub fn shard_of(&self, x: ObjectId) -> Option<ShardId> {
        self.owner.get(&x).copied()
    }

    pub fn owns(&self, s: ShardId, x: ObjectId) -> bool {
        self.shard_of(x) == Some(s)
    }

    pub fn shards(&self) -> BTreeSet<ShardId> {
        self.owner.values().copied().collect()
    }

    pub fn objects_of(&self, s: ShardId) -> impl Iterator<Item = ObjectId> + '_ {
        self.owner.iter().filter(move |(_, o)| **o == s).map(|(x, _)| *x)
    }
}

/// `l|s`: keep only reads and writes on objects of `s`.
pub fn project(l: &Payload, s: ShardId, m: &ShardMap) -> Payload {
    Payload {
        reads: l.reads.iter().filter(|(x, _)| m.owns(s, **x)).map(|(x, v)| (*x, *v)).collect(),
        writes: l.writes.iter().filter(|(x, _)| m.owns(s, **x)).map(|(x, v)| (*x, v.clone())).collect(),
        commit_version: l.commit_version,
    }
}

/// Shards whose projection of `l` is non-empty; `∅` for `ε`.
pub fn shards_of(l: &Payload, m: &ShardMap) -> BTreeSet<ShardId> {
    l.objects().filter_map(|x| m.shard_of(x)).collect()
}

fn overwritten(l: &Payload, others: &[&Payload], visible: impl Fn(ObjectId) -> bool) -> bool {
    l.reads
        .iter()
        .filter(|(x, _)| visible(**x))
        .any(|(x, v)| others.iter().any(|o| o.writes.contains_key(x) && o.commit_version > *v))
}

fn verdict(abort: bool) -> Decision {
    if abort {
        Decision::Abort
    } else {
        Decision::Commit
    }
}

/// `f(L, l)`: COMMIT iff no version read by `l` was overwritten by `L`.
pub fn certify_global(committed: &[&Payload], l: &Payload) -> Decision {
    verdict(overwritten(l, committed, |_| true))
}

/// `f_s`: `f` restricted to the objects of `s`.
pub fn certify_committed_local(s: ShardId, m: &ShardMap, committed: &[&Payload], l: &Payload) -> Decision {
    verdict(overwritten(l, committed, |x| m.owns(s, x)))
}

/// `g_s`: ABORT on any read-write or write-read overlap with a prepared
/// payload, restricted to the objects of `s`.
pub fn certify_prepared_local(s: ShardId, m: &ShardMap, prepared: &[&Payload], l: &Payload) -> Decision {
    let reads_written =
        l.reads.keys().filter(|x| m.owns(s, **x)).any(|x| prepared.iter().any(|o| o.writes.contains_key(x)));
    let writes_read =
        l.writes.keys().filter(|x| m.owns(s, **x)).any(|x| prepared.iter().any(|o| o.reads.contains_key(x)));
    verdict(reads_written || writes_read)
}

/// A pluggable isolation level. Implementations must keep the three functions
/// distributive over payload sets and must satisfy the matching conditions
/// checked by the property tests (global commit iff every shard commits, and
/// `g_s` no weaker than `f_s`).
pub trait Certifier: Send + Sync {
    fn global(&self, committed: &[&Payload], l: &Payload) -> Decision;
    fn committed_local(&self, s: ShardId, m: &ShardMap, committed: &[&Payload], l: &Payload) -> Decision;
    fn prepared_local(&self, s: ShardId, m: &ShardMap, prepared: &[&Payload], l: &Payload) -> Decision;
}

/// The shipped instance: serializability via version checks.
#[derive(Clone, Copy, Debug, Default)]
pub struct Serializability;

impl Certifier for Serializability {
    fn global(&self, committed: &[&Payload], l: &Payload) -> Decision {
        certify_global(committed, l)
    }
    fn committed_local(&self, s: ShardId, m: &ShardMap, committed: &[&Payload], l: &Payload) -> Decision {
        certify_committed_local(s, m, committed, l)
    }
    fn prepared_local(&self, s: ShardId, m: &ShardMap, prepared: &[&Payload], l: &Payload) -> Decision {
        certify_prepared_local(s, m, prepared, l)
    }
}
