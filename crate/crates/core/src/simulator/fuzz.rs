//! Random scenarios for seeded fuzzing.
//!
//! Each shard independently gets at most one crash of a current member and
//! at most one reconfiguration, at steps drawn from `0..horizon`. A shard
//! that loses a member is always reconfigured afterwards so the corpus
//! exercises recovery rather than only stalls.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::ids::ShardId;
use crate::simulator::scenario::{
    Action, FaultSpec, Model, Placement, Scenario, ScriptStep, SystemSpec, Trigger, WorkloadSpec,
};

#[derive(Clone, Debug, PartialEq)]
pub struct FuzzConfig {
    pub model: Model,
    pub shards: u32,
    pub replicas: usize,
    pub spares: usize,
    pub transactions: u32,
    pub conflict_rate: f64,
    /// Faults are scheduled within the first `horizon` steps.
    pub horizon: u64,
    pub crash_probability: f64,
    pub reconfigure_probability: f64,
    pub retry_budget: u32,
    pub max_steps: u64,
}

impl Default for FuzzConfig {
    fn default() -> FuzzConfig {
        FuzzConfig {
            model: Model::Mp,
            shards: 3,
            replicas: 2,
            spares: 2,
            transactions: 8,
            conflict_rate: 0.3,
            horizon: 120,
            crash_probability: 0.5,
            reconfigure_probability: 0.5,
            retry_budget: 3,
            max_steps: 20_000,
        }
    }
}

/// Fault plans draw from a stream independent of the engine's scheduler.
const PLAN_STREAM: u64 = 0x5eed_fa17;

pub fn scenario(cfg: &FuzzConfig, seed: u64) -> Scenario {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ PLAN_STREAM);
    let mut plan: Vec<(u64, Action)> = Vec::new();
    for s in (1..=cfg.shards).map(ShardId) {
        let crash = rng.gen_bool(cfg.crash_probability).then(|| rng.gen_range(0..cfg.horizon));
        let reconf = rng.gen_bool(cfg.reconfigure_probability).then(|| rng.gen_range(0..cfg.horizon));
        if let Some(at) = crash {
            plan.push((at, Action::Crash { pid: None, shard: Some(s) }));
        }
        let reconf = match (crash, reconf) {
            (Some(c), Some(r)) => Some(r.max(c + 1)),
            (Some(c), None) => Some(c + 1 + rng.gen_range(0..cfg.horizon / 4 + 1)),
            (None, r) => r,
        };
        if let Some(at) = reconf {
            plan.push((at, Action::Reconfigure { pid: None, shard: Some(s) }));
        }
    }
    plan.sort_by_key(|(at, _)| *at);
    let script =
        plan.into_iter().map(|(at, action)| ScriptStep { trigger: Trigger::At(at), action }.to_string()).collect();
    Scenario {
        name: format!("fuzz-{}-{seed}", cfg.model),
        system: SystemSpec {
            model: cfg.model,
            shards: cfg.shards,
            replicas: cfg.replicas,
            spares: cfg.spares,
            objects_per_shard: None,
            layout: None,
            seed,
            max_steps: cfg.max_steps,
            rdma_capacity: crate::rdma_channel::DEFAULT_CAPACITY,
            starvation_age: 64,
        },
        workload: WorkloadSpec {
            transactions: cfg.transactions,
            conflict_rate: cfg.conflict_rate,
            client: Placement::Remote,
            txn: Vec::new(),
        },
        faults: FaultSpec { script, retry_budget: cfg.retry_budget },
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn plans_are_deterministic_and_bounded() {
        let cfg = FuzzConfig::default();
        for seed in 0..50 {
            let a = scenario(&cfg, seed);
            assert_eq!(a, scenario(&cfg, seed));
            let r = a.resolve().unwrap();
            for s in 1..=cfg.shards {
                let tag = format!("s{s}");
                let crashes = a.faults.script.iter().filter(|l| l.contains("crash") && l.ends_with(&tag)).count();
                let reconfs = a.faults.script.iter().filter(|l| l.contains("reconfigure") && l.ends_with(&tag)).count();
                assert!(crashes <= 1 && reconfs <= 1);
                assert!(crashes <= reconfs);
            }
            let steps: Vec<u64> = r
                .script
                .iter()
                .map(|st| match st.trigger {
                    Trigger::At(n) => n,
                    Trigger::Quiet => unreachable!(),
                })
                .collect();
            assert!(steps.windows(2).all(|w| w[0] <= w[1]));
        }
    }
}
