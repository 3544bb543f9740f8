//! Checks over execution traces.
//!
//! Every check is a pure function of a [`Trace`]: the scenario embedded in
//! the trace supplies the object placement, the initial configurations and
//! the protocol variant, and compare-and-swap records supply every later
//! configuration. Violations name the rule broken and the trace entries that
//! witness it.

pub mod history;
pub mod invariants;
pub mod prefix;
pub mod tcsll;

use std::collections::BTreeMap;
use std::fmt;

use serde::Serialize;

use crate::certification::{Certifier, ShardMap};
use crate::config_service::ShardConfig;
use crate::ids::{Epoch, Pid, ShardId};
use crate::message::{CsConfig, CsKey};
use crate::simulator::scenario::{Model, ScenarioError};
use crate::simulator::trace::{Record, Trace};

pub use history::{check_correct, Action, History, Verdict, DEFAULT_ORACLE_BOUND};
pub use invariants::{check_invariants, check_unique_decisions, Accepted};
pub use prefix::prefix_holes;
pub use tcsll::{check_tcsll, Assignment};

#[derive(Debug, thiserror::Error)]
pub enum CheckError {
    #[error("trace has no META record")]
    NoMeta,
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
}

/// A broken rule with the indices of the trace entries that witness it.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Violation {
    /// `inv1` .. `inv13` for invariants, `tcsll:<constraint>` for the
    /// low-level constraints.
    pub rule: String,
    pub detail: String,
    pub witnesses: Vec<usize>,
}

impl Violation {
    pub fn new(rule: impl Into<String>, detail: impl Into<String>, mut witnesses: Vec<usize>) -> Violation {
        witnesses.sort_unstable();
        witnesses.dedup();
        Violation { rule: rule.into(), detail: detail.into(), witnesses }
    }

    /// The smallest contiguous range of entries containing every witness.
    pub fn window(&self) -> Option<(usize, usize)> {
        Some((*self.witnesses.first()?, *self.witnesses.last()?))
    }

    /// The witnessing trace lines, in trace order.
    pub fn excerpt(&self, trace: &Trace) -> String {
        self.witnesses.iter().filter_map(|i| trace.entries.get(*i)).map(|e| e.line() + "\n").collect()
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.rule, self.detail)?;
        if let Some((a, b)) = self.window() {
            write!(f, " [entries {a}..={b}]")?;
        }
        Ok(())
    }
}

/// Static facts about the system a trace ran on.
#[derive(Clone, Debug)]
pub struct Setup {
    pub model: Model,
    pub map: ShardMap,
    pub shard_of: BTreeMap<Pid, ShardId>,
    /// Every configuration of every shard, by epoch. In the global-epoch
    /// variant each global configuration contributes one entry per shard.
    pub configs: BTreeMap<ShardId, BTreeMap<Epoch, ShardConfig>>,
}

impl Setup {
    pub fn from_trace(trace: &Trace) -> Result<Setup, CheckError> {
        let (scenario, _) = trace.scenario().ok_or(CheckError::NoMeta)?;
        let r = scenario.resolve()?;
        let mut configs: BTreeMap<ShardId, BTreeMap<Epoch, ShardConfig>> = BTreeMap::new();
        for (s, c) in r.shard_boot() {
            configs.entry(s).or_default().insert(c.epoch, c);
        }
        for (_, rec) in trace.records() {
            let Record::Cas { key, cfg, ok: true, .. } = rec else { continue };
            match (key, cfg) {
                (CsKey::Shard(s), CsConfig::Shard(c)) => {
                    configs.entry(*s).or_default().insert(c.epoch, c.clone());
                }
                (_, CsConfig::Shard(_)) => {}
                (_, CsConfig::Global(g)) => {
                    for (s, m) in &g.members {
                        let leader = g.leaders[s];
                        let c = ShardConfig { epoch: g.epoch, members: m.clone(), leader };
                        configs.entry(*s).or_default().insert(g.epoch, c);
                    }
                }
            }
        }
        Ok(Setup { model: scenario.system.model, map: r.map.clone(), shard_of: r.processes().collect(), configs })
    }

    pub fn config(&self, s: ShardId, e: Epoch) -> Option<&ShardConfig> {
        self.configs.get(&s)?.get(&e)
    }

    /// Members of `s` at `e` other than its leader.
    pub fn followers(&self, s: ShardId, e: Epoch) -> Option<impl Iterator<Item = Pid> + '_> {
        let c = self.config(s, e)?;
        Some(c.members.iter().copied().filter(move |p| *p != c.leader))
    }

    pub fn global_epochs(&self) -> bool {
        self.model != Model::Mp
    }
}

/// Which checks to run.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum CheckSet {
    #[default]
    All,
    Invariants,
    TcsLl,
    Correctness,
}

impl std::str::FromStr for CheckSet {
    type Err = String;

    fn from_str(s: &str) -> Result<CheckSet, String> {
        Ok(match s {
            "all" => CheckSet::All,
            "invariants" => CheckSet::Invariants,
            "tcsll" => CheckSet::TcsLl,
            "correctness" => CheckSet::Correctness,
            _ => return Err(format!("unknown check set {s:?}")),
        })
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct Report {
    pub violations: Vec<Violation>,
    pub correctness: Option<Verdict>,
}

impl Report {
    pub fn ok(&self) -> bool {
        self.violations.is_empty() && !self.correctness.as_ref().is_some_and(Verdict::is_violation)
    }
}

/// Runs `which` checks over `trace`. The invariant set always includes the
/// unique-decision check.
pub fn check_trace(
    trace: &Trace,
    which: CheckSet,
    f: &dyn Certifier,
    oracle_bound: usize,
) -> Result<Report, CheckError> {
    let mut violations = Vec::new();
    let mut correctness = None;
    if matches!(which, CheckSet::All | CheckSet::Invariants) {
        violations.extend(check_invariants(trace)?);
    }
    if matches!(which, CheckSet::All | CheckSet::TcsLl) {
        let setup = Setup::from_trace(trace)?;
        let a = Assignment::extract(trace, &setup)?;
        violations.extend(check_tcsll(&a, &setup, f));
    }
    if matches!(which, CheckSet::All | CheckSet::Correctness) {
        correctness = Some(check_correct(&History::from_trace(trace), f, oracle_bound));
    }
    Ok(Report { violations, correctness })
}
