//! The reliable configuration service.
//!
//! Per-shard mode keeps one append-only sequence of `⟨e, M, p_l⟩` per shard
//! and announces every successful swap to the other shards' members. Global
//! mode keeps a single sequence whose entries carry the membership and leader
//! of every shard at once.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::ids::{Epoch, Pid, ShardId};
use crate::message::{CsConfig, CsKey, Message};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ShardConfig {
    pub epoch: Epoch,
    pub members: BTreeSet<Pid>,
    pub leader: Pid,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GlobalConfig {
    pub epoch: Epoch,
    pub members: BTreeMap<ShardId, BTreeSet<Pid>>,
    pub leaders: BTreeMap<ShardId, Pid>,
}

impl GlobalConfig {
    pub fn all_members(&self) -> BTreeSet<Pid> {
        self.members.values().flatten().copied().collect()
    }
}

pub trait Configuration: Clone {
    fn epoch(&self) -> Epoch;
    fn is_well_formed(&self) -> bool;
    fn processes(&self) -> BTreeSet<Pid>;
}

impl Configuration for ShardConfig {
    fn epoch(&self) -> Epoch {
        self.epoch
    }
    fn is_well_formed(&self) -> bool {
        self.epoch >= 1 && self.members.contains(&self.leader)
    }
    fn processes(&self) -> BTreeSet<Pid> {
        self.members.clone()
    }
}

impl Configuration for GlobalConfig {
    fn epoch(&self) -> Epoch {
        self.epoch
    }
    fn is_well_formed(&self) -> bool {
        self.epoch >= 1
            && self.members.keys().eq(self.leaders.keys())
            && self.leaders.iter().all(|(s, l)| self.members[s].contains(l))
    }
    fn processes(&self) -> BTreeSet<Pid> {
        self.all_members()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum CsError {
    #[error("new epoch {new} does not exceed expected epoch {expected}")]
    NonIncreasingEpoch { expected: Epoch, new: Epoch },
    #[error("configuration at epoch {0} is malformed")]
    Malformed(Epoch),
    #[error("no configuration with epoch {0}")]
    UnknownEpoch(Epoch),
    #[error("unknown key {0:?}")]
    UnknownKey(CsKey),
    #[error("configuration kind does not match key {0:?}")]
    KindMismatch(CsKey),
}

/// An append-only sequence with strictly increasing epochs.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfigSeq<C> {
    entries: Vec<C>,
    used: BTreeSet<Pid>,
}

impl<C: Configuration> ConfigSeq<C> {
    pub fn bootstrap(cfg: C) -> ConfigSeq<C> {
        assert!(cfg.is_well_formed(), "bootstrap configuration is malformed");
        let used = cfg.processes();
        ConfigSeq { entries: vec![cfg], used }
    }

    /// Appends `cfg` iff the last stored epoch equals `expected_epoch`.
    pub fn compare_and_swap(&mut self, expected_epoch: Epoch, cfg: C) -> Result<bool, CsError> {
        if cfg.epoch() <= expected_epoch {
            return Err(CsError::NonIncreasingEpoch { expected: expected_epoch, new: cfg.epoch() });
        }
        if !cfg.is_well_formed() {
            return Err(CsError::Malformed(cfg.epoch()));
        }
        if self.get_last().epoch() != expected_epoch {
            return Ok(false);
        }
        self.used.extend(cfg.processes());
        self.entries.push(cfg);
        Ok(true)
    }

    pub fn get_last(&self) -> &C {
        self.entries.last().expect("sequence holds at least the bootstrap entry")
    }

    pub fn get(&self, e: Epoch) -> Result<&C, CsError> {
        self.entries.iter().find(|c| c.epoch() == e).ok_or(CsError::UnknownEpoch(e))
    }

    pub fn entries(&self) -> &[C] {
        &self.entries
    }

    /// Every process that appeared in some stored configuration.
    pub fn used(&self) -> &BTreeSet<Pid> {
        &self.used
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ConfigService {
    PerShard(BTreeMap<ShardId, ConfigSeq<ShardConfig>>),
    Global(ConfigSeq<GlobalConfig>),
}

impl ConfigService {
    pub fn per_shard(bootstrap: impl IntoIterator<Item = (ShardId, ShardConfig)>) -> ConfigService {
        ConfigService::PerShard(bootstrap.into_iter().map(|(s, c)| (s, ConfigSeq::bootstrap(c))).collect())
    }

    pub fn global(bootstrap: GlobalConfig) -> ConfigService {
        ConfigService::Global(ConfigSeq::bootstrap(bootstrap))
    }

    pub fn shard(&self, s: ShardId) -> Option<&ConfigSeq<ShardConfig>> {
        match self {
            ConfigService::PerShard(m) => m.get(&s),
            ConfigService::Global(_) => None,
        }
    }

    pub fn global_seq(&self) -> Option<&ConfigSeq<GlobalConfig>> {
        match self {
            ConfigService::Global(g) => Some(g),
            ConfigService::PerShard(_) => None,
        }
    }

    pub fn compare_and_swap(&mut self, key: CsKey, expected_epoch: Epoch, cfg: CsConfig) -> Result<bool, CsError> {
        match (self, key, cfg) {
            (ConfigService::PerShard(m), CsKey::Shard(s), CsConfig::Shard(c)) => {
                m.get_mut(&s).ok_or(CsError::UnknownKey(key))?.compare_and_swap(expected_epoch, c)
            }
            (ConfigService::Global(g), CsKey::Global, CsConfig::Global(c)) => g.compare_and_swap(expected_epoch, c),
            _ => Err(CsError::KindMismatch(key)),
        }
    }

    pub fn get_last(&self, key: CsKey) -> Result<CsConfig, CsError> {
        match (self, key) {
            (ConfigService::PerShard(m), CsKey::Shard(s)) => {
                Ok(CsConfig::Shard(m.get(&s).ok_or(CsError::UnknownKey(key))?.get_last().clone()))
            }
            (ConfigService::Global(g), CsKey::Global) => Ok(CsConfig::Global(g.get_last().clone())),
            _ => Err(CsError::KindMismatch(key)),
        }
    }

    pub fn get(&self, key: CsKey, e: Epoch) -> Result<CsConfig, CsError> {
        match (self, key) {
            (ConfigService::PerShard(m), CsKey::Shard(s)) => {
                Ok(CsConfig::Shard(m.get(&s).ok_or(CsError::UnknownKey(key))?.get(e)?.clone()))
            }
            (ConfigService::Global(g), CsKey::Global) => Ok(CsConfig::Global(g.get(e)?.clone())),
            _ => Err(CsError::KindMismatch(key)),
        }
    }

    fn used(&self, key: CsKey) -> BTreeSet<Pid> {
        match (self, key) {
            (ConfigService::PerShard(m), CsKey::Shard(s)) => m.get(&s).map(|q| q.used().clone()).unwrap_or_default(),
            (ConfigService::Global(g), CsKey::Global) => g.used().clone(),
            _ => BTreeSet::new(),
        }
    }

    /// CONFIG_CHANGE for every current member of every shard other than `s`.
    pub fn broadcast_config_change(&self, s: ShardId, cfg: &ShardConfig) -> Vec<(Pid, Message)> {
        let ConfigService::PerShard(m) = self else { return Vec::new() };
        let msg = Message::ConfigChange { s, e: cfg.epoch, members: cfg.members.clone(), leader: cfg.leader };
        m.iter()
            .filter(|(other, _)| **other != s)
            .flat_map(|(_, seq)| seq.get_last().members.iter().copied())
            .map(|p| (p, msg.clone()))
            .collect()
    }

    /// Serves one request. Returns the reply for the requester plus any
    /// announcements, and the swap outcome for logging.
    pub fn handle(&mut self, msg: &Message) -> CsOutcome {
        match msg {
            Message::CsGetLast { req, key } => {
                CsOutcome::reply(Message::CsReply { req: *req, cfg: self.get_last(*key).ok(), used: self.used(*key) })
            }
            Message::CsGet { req, key, e } => {
                CsOutcome::reply(Message::CsReply { req: *req, cfg: self.get(*key, *e).ok(), used: self.used(*key) })
            }
            Message::CsCas { req, key, expected, cfg } => {
                let ok = self.compare_and_swap(*key, *expected, cfg.clone()).unwrap_or(false);
                let broadcast = match (ok, key, cfg) {
                    (true, CsKey::Shard(s), CsConfig::Shard(c)) => self.broadcast_config_change(*s, c),
                    _ => Vec::new(),
                };
                CsOutcome { reply: Some(Message::CsCasReply { req: *req, ok }), broadcast, swapped: Some(ok) }
            }
            _ => CsOutcome { reply: None, broadcast: Vec::new(), swapped: None },
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CsOutcome {
    pub reply: Option<Message>,
    pub broadcast: Vec<(Pid, Message)>,
    pub swapped: Option<bool>,
}

impl CsOutcome {
    fn reply(m: Message) -> CsOutcome {
        CsOutcome { reply: Some(m), broadcast: Vec::new(), swapped: None }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pids(ns: &[u32]) -> BTreeSet<Pid> {
        ns.iter().map(|n| Pid(*n)).collect()
    }

    fn cfg(e: Epoch, members: &[u32], leader: u32) -> ShardConfig {
        ShardConfig { epoch: e, members: pids(members), leader: Pid(leader) }
    }

    fn two_shard_cs() -> ConfigService {
        ConfigService::per_shard([(ShardId(1), cfg(1, &[1, 2], 1)), (ShardId(2), cfg(1, &[3, 4], 3))])
    }

    #[test]
    fn cas_extends_only_on_matching_epoch() {
        let mut seq = ConfigSeq::bootstrap(cfg(1, &[1, 2], 1));
        assert_eq!(seq.compare_and_swap(1, cfg(2, &[2, 5], 2)), Ok(true));
        assert_eq!(seq.get_last().epoch, 2);
        assert_eq!(seq.compare_and_swap(1, cfg(3, &[2], 2)), Ok(false));
        assert_eq!(seq.entries().len(), 2);
        assert_eq!(seq.used(), &pids(&[1, 2, 5]));
    }

    #[test]
    fn racing_cas_with_same_expected_epoch_has_one_winner() {
        let mut seq = ConfigSeq::bootstrap(cfg(1, &[1, 2], 1));
        let a = seq.compare_and_swap(1, cfg(2, &[1, 5], 1)).unwrap();
        let b = seq.compare_and_swap(1, cfg(2, &[2, 6], 2)).unwrap();
        assert_eq!((a, b), (true, false));
    }

    #[test]
    fn cas_rejects_non_increasing_and_malformed() {
        let mut seq = ConfigSeq::bootstrap(cfg(1, &[1, 2], 1));
        assert!(matches!(seq.compare_and_swap(1, cfg(1, &[1], 1)), Err(CsError::NonIncreasingEpoch { .. })));
        assert_eq!(seq.compare_and_swap(1, cfg(2, &[1], 9)), Err(CsError::Malformed(2)));
    }

    #[test]
    fn get_and_get_last() {
        let mut cs = two_shard_cs();
        let k1 = CsKey::Shard(ShardId(1));
        assert_eq!(cs.get_last(k1).unwrap().epoch(), 1);
        assert!(cs.compare_and_swap(k1, 1, CsConfig::Shard(cfg(2, &[2, 5], 2))).unwrap());
        assert_eq!(cs.get_last(k1).unwrap().epoch(), 2);
        assert_eq!(cs.get(k1, 1).unwrap(), CsConfig::Shard(cfg(1, &[1, 2], 1)));
        assert_eq!(cs.get(k1, 7), Err(CsError::UnknownEpoch(7)));
        // Shard 2 is untouched by shard 1's reconfiguration.
        assert_eq!(cs.get(CsKey::Shard(ShardId(2)), 1).unwrap(), CsConfig::Shard(cfg(1, &[3, 4], 3)));
    }

    #[test]
    fn broadcast_targets_other_shards_only() {
        let cs = two_shard_cs();
        let out = cs.broadcast_config_change(ShardId(1), &cfg(2, &[2, 5], 2));
        let targets: Vec<Pid> = out.iter().map(|(p, _)| *p).collect();
        assert_eq!(targets, vec![Pid(3), Pid(4)]);

        let single = ConfigService::per_shard([(ShardId(1), cfg(1, &[1, 2], 1))]);
        assert!(single.broadcast_config_change(ShardId(1), &cfg(2, &[2], 2)).is_empty());

        let three = ConfigService::per_shard([
            (ShardId(1), cfg(1, &[1, 2], 1)),
            (ShardId(2), cfg(1, &[3, 4], 3)),
            (ShardId(3), cfg(1, &[5, 6], 5)),
        ]);
        let t: BTreeSet<Pid> =
            three.broadcast_config_change(ShardId(2), &cfg(2, &[4], 4)).into_iter().map(|(p, _)| p).collect();
        assert_eq!(t, pids(&[1, 2, 5, 6]));
    }

    #[test]
    fn handle_cas_broadcasts_on_success_only() {
        let mut cs = two_shard_cs();
        let key = CsKey::Shard(ShardId(1));
        let req = Message::CsCas { req: 9, key, expected: 1, cfg: CsConfig::Shard(cfg(2, &[2, 5], 2)) };
        let out = cs.handle(&req);
        assert_eq!(out.reply, Some(Message::CsCasReply { req: 9, ok: true }));
        assert_eq!(out.broadcast.len(), 2);
        let out = cs.handle(&req);
        assert_eq!(out.reply, Some(Message::CsCasReply { req: 9, ok: false }));
        assert!(out.broadcast.is_empty());
    }

    #[test]
    fn global_sequence() {
        let boot = GlobalConfig {
            epoch: 1,
            members: [(ShardId(1), pids(&[1, 2])), (ShardId(2), pids(&[3, 4]))].into_iter().collect(),
            leaders: [(ShardId(1), Pid(1)), (ShardId(2), Pid(3))].into_iter().collect(),
        };
        let mut cs = ConfigService::global(boot.clone());
        let mut next = boot.clone();
        next.epoch = 2;
        next.members.insert(ShardId(2), pids(&[4, 5]));
        next.leaders.insert(ShardId(2), Pid(4));
        assert!(cs.compare_and_swap(CsKey::Global, 1, CsConfig::Global(next.clone())).unwrap());
        assert!(!cs.compare_and_swap(CsKey::Global, 1, CsConfig::Global(next)).unwrap());
        assert_eq!(cs.get_last(CsKey::Global).unwrap().epoch(), 2);
        assert_eq!(cs.global_seq().unwrap().used(), &pids(&[1, 2, 3, 4, 5]));
        assert!(cs.broadcast_config_change(ShardId(1), &cfg(2, &[1], 1)).is_empty());
    }
}
