//! Scenario files: system shape, workload and fault script.
//!
//! A scenario is TOML preceded by a `#! rcommit-scenario v1` header line.
//! Script entries are strings such as `"at 40: crash p3"` or
//! `"quiet: reconfigure p4 s2"`; they run strictly in order.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::certification::ShardMap;
use crate::config_service::{GlobalConfig, ShardConfig};
use crate::ids::{NodeId, ObjectId, Pid, ShardId, TxnId};

pub const SCENARIO_HEADER: &str = "#! rcommit-scenario v1";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Model {
    #[serde(rename = "mp")]
    Mp,
    #[serde(rename = "rdma")]
    Rdma,
    #[serde(rename = "naive-rdma")]
    NaiveRdma,
}

impl FromStr for Model {
    type Err = ScenarioError;
    fn from_str(s: &str) -> Result<Model, ScenarioError> {
        match s {
            "mp" => Ok(Model::Mp),
            "rdma" => Ok(Model::Rdma),
            "naive-rdma" => Ok(Model::NaiveRdma),
            _ => Err(ScenarioError::Field { field: "model".into(), msg: format!("unknown model {s:?}") }),
        }
    }
}

impl fmt::Display for Model {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Model::Mp => "mp",
            Model::Rdma => "rdma",
            Model::NaiveRdma => "naive-rdma",
        })
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ScenarioError {
    #[error("missing or unsupported header line (expected {SCENARIO_HEADER:?})")]
    Header,
    #[error(transparent)]
    Toml(#[from] toml::de::Error),
    #[error("{field}: {msg}")]
    Field { field: String, msg: String },
}

fn field_err(field: impl Into<String>, msg: impl Into<String>) -> ScenarioError {
    ScenarioError::Field { field: field.into(), msg: msg.into() }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ShardLayout {
    /// Bootstrap members, leader first.
    pub members: Vec<Pid>,
    #[serde(default)]
    pub spares: Vec<Pid>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemSpec {
    pub model: Model,
    pub shards: u32,
    pub replicas: usize,
    #[serde(default)]
    pub spares: usize,
    #[serde(default)]
    pub objects_per_shard: Option<u32>,
    /// Overrides the generated process layout.
    #[serde(default)]
    pub layout: Option<Vec<ShardLayout>>,
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default = "default_max_steps")]
    pub max_steps: u64,
    #[serde(default = "default_capacity")]
    pub rdma_capacity: usize,
    /// An event older than this many steps is scheduled before any other.
    #[serde(default = "default_starvation")]
    pub starvation_age: u64,
}

fn default_seed() -> u64 {
    1
}
fn default_max_steps() -> u64 {
    20_000
}
fn default_capacity() -> usize {
    crate::rdma_channel::DEFAULT_CAPACITY
}
fn default_starvation() -> u64 {
    64
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Placement {
    /// A separate client node, one hop from the coordinator.
    Remote,
    /// The client lives on the coordinator's machine.
    Colocated,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TxnSpec {
    pub id: TxnId,
    pub coordinator: Pid,
    /// Objects read and written.
    pub objects: Vec<ObjectId>,
    #[serde(default)]
    pub read_only: Vec<ObjectId>,
    #[serde(default)]
    pub client: Option<Placement>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorkloadSpec {
    /// Randomly generated transactions, invoked at scheduler-chosen steps.
    #[serde(default)]
    pub transactions: u32,
    #[serde(default)]
    pub conflict_rate: f64,
    #[serde(default = "default_placement")]
    pub client: Placement,
    /// Hand-written transactions; invoked only by `certify` script actions.
    #[serde(default)]
    pub txn: Vec<TxnSpec>,
}

fn default_placement() -> Placement {
    Placement::Remote
}

impl Default for WorkloadSpec {
    fn default() -> Self {
        WorkloadSpec { transactions: 0, conflict_rate: 0.0, client: Placement::Remote, txn: Vec::new() }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FaultSpec {
    #[serde(default)]
    pub script: Vec<String>,
    /// When the system goes quiet, retry undecided prepared slots at most
    /// this many times per transaction.
    #[serde(default)]
    pub retry_budget: u32,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    pub system: SystemSpec,
    #[serde(default)]
    pub workload: WorkloadSpec,
    #[serde(default)]
    pub faults: FaultSpec,
}

/// Pattern for `block`/`unblock`: a node or any node.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum NodePat {
    Any,
    Node(NodeId),
}

impl NodePat {
    pub fn matches(self, n: NodeId) -> bool {
        match self {
            NodePat::Any => true,
            NodePat::Node(m) => m == n,
        }
    }
}

impl fmt::Display for NodePat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            NodePat::Any => f.write_str("*"),
            NodePat::Node(n) => write!(f, "{n}"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Action {
    Crash {
        pid: Option<Pid>,
        shard: Option<ShardId>,
    },
    /// `pid: None` picks a live process; `shard` is ignored by the global variant.
    Reconfigure {
        pid: Option<Pid>,
        shard: Option<ShardId>,
    },
    Retry {
        pid: Pid,
        txn: TxnId,
    },
    Certify {
        txn: TxnId,
    },
    Block {
        src: NodePat,
        dst: NodePat,
    },
    Unblock {
        src: NodePat,
        dst: NodePat,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Trigger {
    /// Not before this step; earlier if the system is quiet.
    At(u64),
    /// Once no event is enabled.
    Quiet,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScriptStep {
    pub trigger: Trigger,
    pub action: Action,
}

fn parse_pat(s: &str) -> Result<NodePat, String> {
    if s == "*" {
        return Ok(NodePat::Any);
    }
    s.parse::<NodeId>().map(NodePat::Node).map_err(|e| e.to_string())
}

impl FromStr for ScriptStep {
    type Err = String;
    fn from_str(line: &str) -> Result<ScriptStep, String> {
        let (trigger, rest) = match line.split_once(':') {
            Some((t, rest)) => {
                let t = t.trim();
                let trig = if t == "quiet" {
                    Trigger::Quiet
                } else if let Some(n) = t.strip_prefix("at ") {
                    Trigger::At(n.trim().parse().map_err(|_| format!("bad step {n:?}"))?)
                } else {
                    return Err(format!("unknown trigger {t:?}"));
                };
                (trig, rest)
            }
            None => (Trigger::At(0), line),
        };
        let words: Vec<&str> = rest.split_whitespace().collect();
        let pid = |w: &str| w.parse::<Pid>().map_err(|e| e.to_string());
        let shard = |w: &str| w.parse::<ShardId>().map_err(|e| e.to_string());
        let action = match words.as_slice() {
            ["crash", "any", s] => Action::Crash { pid: None, shard: Some(shard(s)?) },
            ["crash", p] => Action::Crash { pid: Some(pid(p)?), shard: None },
            ["reconfigure", "any"] => Action::Reconfigure { pid: None, shard: None },
            ["reconfigure", "any", s] => Action::Reconfigure { pid: None, shard: Some(shard(s)?) },
            ["reconfigure", p] => Action::Reconfigure { pid: Some(pid(p)?), shard: None },
            ["reconfigure", p, s] => Action::Reconfigure { pid: Some(pid(p)?), shard: Some(shard(s)?) },
            ["retry", p, t] => {
                Action::Retry { pid: pid(p)?, txn: t.parse().map_err(|e: crate::ids::IdParseError| e.to_string())? }
            }
            ["certify", t] => Action::Certify { txn: t.parse().map_err(|e: crate::ids::IdParseError| e.to_string())? },
            ["block", a, "->", b] => Action::Block { src: parse_pat(a)?, dst: parse_pat(b)? },
            ["unblock", a, "->", b] => Action::Unblock { src: parse_pat(a)?, dst: parse_pat(b)? },
            _ => return Err(format!("unknown action {:?}", rest.trim())),
        };
        Ok(ScriptStep { trigger, action })
    }
}

impl fmt::Display for ScriptStep {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.trigger {
            Trigger::At(n) => write!(f, "at {n}: ")?,
            Trigger::Quiet => f.write_str("quiet: ")?,
        }
        let opt = |p: Option<String>| p.unwrap_or_else(|| "any".into());
        match &self.action {
            Action::Crash { pid: Some(p), .. } => write!(f, "crash {p}"),
            Action::Crash { pid: None, shard } => write!(f, "crash any {}", opt(shard.map(|s| s.to_string()))),
            Action::Reconfigure { pid, shard } => {
                write!(f, "reconfigure {}", opt(pid.map(|p| p.to_string())))?;
                match shard {
                    Some(s) => write!(f, " {s}"),
                    None => Ok(()),
                }
            }
            Action::Retry { pid, txn } => write!(f, "retry {pid} {txn}"),
            Action::Certify { txn } => write!(f, "certify {txn}"),
            Action::Block { src, dst } => write!(f, "block {src} -> {dst}"),
            Action::Unblock { src, dst } => write!(f, "unblock {src} -> {dst}"),
        }
    }
}

/// A scenario with derived structure resolved and validated.
#[derive(Clone, Debug)]
pub struct Resolved {
    pub scenario: Scenario,
    pub layout: BTreeMap<ShardId, ShardLayout>,
    pub map: ShardMap,
    pub objects_per_shard: u32,
    pub script: Vec<ScriptStep>,
}

impl Resolved {
    pub fn shard_of(&self, p: Pid) -> Option<ShardId> {
        self.layout.iter().find(|(_, l)| l.members.contains(&p) || l.spares.contains(&p)).map(|(s, _)| *s)
    }

    pub fn processes(&self) -> impl Iterator<Item = (Pid, ShardId)> + '_ {
        self.layout.iter().flat_map(|(s, l)| l.members.iter().chain(l.spares.iter()).map(move |p| (*p, *s)))
    }

    pub fn spares(&self) -> BTreeMap<ShardId, Vec<Pid>> {
        self.layout.iter().map(|(s, l)| (*s, l.spares.clone())).collect()
    }

    pub fn shard_boot(&self) -> BTreeMap<ShardId, ShardConfig> {
        self.layout
            .iter()
            .map(|(s, l)| {
                (*s, ShardConfig { epoch: 1, members: l.members.iter().copied().collect(), leader: l.members[0] })
            })
            .collect()
    }

    pub fn global_boot(&self) -> GlobalConfig {
        let shards = self.shard_boot();
        GlobalConfig {
            epoch: 1,
            members: shards.iter().map(|(s, c)| (*s, c.members.clone())).collect(),
            leaders: shards.iter().map(|(s, c)| (*s, c.leader)).collect(),
        }
    }

    /// Object every conflicting transaction on `s` touches.
    pub fn hot_object(&self, s: ShardId) -> ObjectId {
        ObjectId((s.0 - 1) * self.objects_per_shard + 1)
    }
}

impl Scenario {
    pub fn parse(text: &str) -> Result<Scenario, ScenarioError> {
        if text.lines().next().map(str::trim) != Some(SCENARIO_HEADER) {
            return Err(ScenarioError::Header);
        }
        // The header is a TOML comment, so error line numbers match the file.
        let sc: Scenario = toml::from_str(text)?;
        sc.resolve()?;
        Ok(sc)
    }

    pub fn to_text(&self) -> String {
        format!("{SCENARIO_HEADER}\n{}", toml::to_string(self).expect("scenario serializes"))
    }

    pub fn resolve(&self) -> Result<Resolved, ScenarioError> {
        let sys = &self.system;
        if sys.shards == 0 {
            return Err(field_err("system.shards", "must be at least 1"));
        }
        if sys.replicas == 0 {
            return Err(field_err("system.replicas", "must be at least 1"));
        }
        if !(0.0..=1.0).contains(&self.workload.conflict_rate) {
            return Err(field_err("workload.conflict_rate", "must lie in [0, 1]"));
        }
        let layout: BTreeMap<ShardId, ShardLayout> = match &sys.layout {
            Some(l) => {
                if l.len() != sys.shards as usize {
                    return Err(field_err("system.layout", format!("expected {} shards, got {}", sys.shards, l.len())));
                }
                l.iter().enumerate().map(|(i, sl)| (ShardId(i as u32 + 1), sl.clone())).collect()
            }
            None => {
                let block = (sys.replicas + sys.spares) as u32;
                (1..=sys.shards)
                    .map(|s| {
                        let base = (s - 1) * block;
                        let members = (1..=sys.replicas as u32).map(|i| Pid(base + i)).collect();
                        let spares = (sys.replicas as u32 + 1..=block).map(|i| Pid(base + i)).collect();
                        (ShardId(s), ShardLayout { members, spares })
                    })
                    .collect()
            }
        };
        let mut seen = std::collections::BTreeSet::new();
        for (s, l) in &layout {
            if l.members.len() != sys.replicas {
                return Err(field_err(
                    format!("system.layout[{}]", s.0 - 1),
                    format!("needs {} members", sys.replicas),
                ));
            }
            for p in l.members.iter().chain(&l.spares) {
                if !seen.insert(*p) {
                    return Err(field_err("system.layout", format!("{p} appears twice")));
                }
            }
        }
        let generated = self.workload.transactions;
        let objects_per_shard = sys.objects_per_shard.unwrap_or(1 + generated.max(4));
        let map = ShardMap::striped(sys.shards, objects_per_shard);
        for (i, t) in self.workload.txn.iter().enumerate() {
            let f = format!("workload.txn[{i}]");
            if t.id.0 <= generated {
                return Err(field_err(f, format!("{} collides with a generated transaction", t.id)));
            }
            if !seen.contains(&t.coordinator) {
                return Err(field_err(f, format!("unknown coordinator {}", t.coordinator)));
            }
            if t.objects.is_empty() && t.read_only.is_empty() {
                return Err(field_err(f, "touches no object"));
            }
            if let Some(x) = t.objects.iter().chain(&t.read_only).find(|x| map.shard_of(**x).is_none()) {
                return Err(field_err(f, format!("object {x} is owned by no shard")));
            }
        }
        let script = self
            .faults
            .script
            .iter()
            .enumerate()
            .map(|(i, line)| line.parse::<ScriptStep>().map_err(|m| field_err(format!("faults.script[{i}]"), m)))
            .collect::<Result<Vec<_>, _>>()?;
        for (i, st) in script.iter().enumerate() {
            let f = format!("faults.script[{i}]");
            let known = |p: &Pid| seen.contains(p);
            let bad = match &st.action {
                Action::Crash { pid: Some(p), .. }
                | Action::Reconfigure { pid: Some(p), .. }
                | Action::Retry { pid: p, .. } => (!known(p)).then(|| format!("unknown process {p}")),
                Action::Certify { txn } => (!self.workload.txn.iter().any(|t| t.id == *txn))
                    .then(|| format!("unknown scripted transaction {txn}")),
                _ => None,
            };
            if let Some(m) = bad {
                return Err(field_err(f, m));
            }
            if let Action::Crash { shard: Some(s), .. } | Action::Reconfigure { shard: Some(s), .. } = &st.action {
                if !layout.contains_key(s) {
                    return Err(field_err(f, format!("unknown shard {s}")));
                }
            }
        }
        Ok(Resolved { scenario: self.clone(), layout, map, objects_per_shard, script })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn script_lines_round_trip() {
        for line in [
            "at 12: crash p3",
            "quiet: crash any s2",
            "at 0: reconfigure p4 s2",
            "at 0: reconfigure p4",
            "quiet: reconfigure any s1",
            "at 5: retry p2 t1",
            "at 0: certify t3",
            "quiet: block p6 -> *",
            "at 0: unblock cs -> p6",
        ] {
            let st: ScriptStep = line.parse().unwrap();
            assert_eq!(st.to_string(), line);
        }
        assert!("explode p1".parse::<ScriptStep>().is_err());
        assert!("soon: crash p1".parse::<ScriptStep>().is_err());
    }

    #[test]
    fn generated_layout_is_contiguous() {
        let sc = Scenario {
            name: "x".into(),
            system: SystemSpec {
                model: Model::Mp,
                shards: 2,
                replicas: 2,
                spares: 1,
                objects_per_shard: None,
                layout: None,
                seed: 1,
                max_steps: 10,
                rdma_capacity: 4,
                starvation_age: 8,
            },
            workload: WorkloadSpec::default(),
            faults: FaultSpec::default(),
        };
        let r = sc.resolve().unwrap();
        assert_eq!(r.layout[&ShardId(2)].members, vec![Pid(4), Pid(5)]);
        assert_eq!(r.layout[&ShardId(2)].spares, vec![Pid(6)]);
        assert_eq!(r.shard_of(Pid(3)), Some(ShardId(1)));
    }

    #[test]
    fn parse_reports_field() {
        let text = format!("{SCENARIO_HEADER}\nname = \"bad\"\n[system]\nmodel = \"mp\"\nshards = 1\nreplicas = 0\n");
        let err = Scenario::parse(&text).unwrap_err().to_string();
        assert!(err.contains("system.replicas"), "{err}");
        assert!(matches!(Scenario::parse("name = 1"), Err(ScenarioError::Header)));
    }
}
