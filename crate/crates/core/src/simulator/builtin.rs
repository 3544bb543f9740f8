//! Named scenarios shipped with the library.
//!
//! Objects are striped four per shard: `s1` owns `x1..x4`, `s2` owns
//! `x5..x8`, `s3` owns `x9..x12`.

use crate::simulator::scenario::{Model, Scenario};

/// Failure-free commit of one transaction over two shards.
const FIG2A: &str = r#"#! rcommit-scenario v1
name = "fig2a"

[system]
model = "mp"
shards = 2
replicas = 2
objects_per_shard = 4

[[workload.txn]]
id = "t1"
coordinator = "p1"
objects = ["x1", "x5"]

[faults]
script = ["certify t1"]
"#;

/// The leader of `s1` crashes; its follower takes over and a fresh process
/// joins. Transactions before and after the change commit.
const FIG2B: &str = r#"#! rcommit-scenario v1
name = "fig2b"

[system]
model = "mp"
shards = 2
replicas = 2
objects_per_shard = 4

[[system.layout]]
members = ["p1", "p2"]
spares = ["p5"]

[[system.layout]]
members = ["p3", "p4"]

[[workload.txn]]
id = "t1"
coordinator = "p3"
objects = ["x1", "x5"]

[[workload.txn]]
id = "t2"
coordinator = "p3"
objects = ["x1", "x6"]

[faults]
script = [
  "certify t1",
  "quiet: crash p1",
  "reconfigure p3 s1",
  "quiet: certify t2",
]
"#;

/// A coordinator in a third shard is cut off while persisting a vote; the
/// system reconfigures around it and a retry aborts the transaction. When
/// the coordinator's write finally arrives, only access control stands
/// between it and a contradictory COMMIT.
const FIG4A: &str = r#"#! rcommit-scenario v1
name = "fig4a"

[system]
model = "naive-rdma"
shards = 3
replicas = 2
objects_per_shard = 4

[[system.layout]]
members = ["p1", "p2"]

[[system.layout]]
members = ["p3", "p4"]
spares = ["p5"]

[[system.layout]]
members = ["p6", "p7"]
spares = ["p8"]

[[workload.txn]]
id = "t1"
coordinator = "p6"
objects = ["x1", "x5"]

[faults]
script = [
  "block p6 -> p4",
  "certify t1",
  "quiet: block * -> p6",
  "crash p3",
  "reconfigure p4 s2",
  "quiet: reconfigure p1 s3",
  "quiet: retry p1 t1",
  "quiet: unblock p6 -> p4",
  "quiet: unblock * -> p6",
]
"#;

/// `t2` is persisted ahead of `t1`; the leader and `t1`'s coordinator crash
/// before `t1` reaches the follower, so `t1` disappears.
const LOST_TXN: &str = r#"#! rcommit-scenario v1
name = "lost-txn"

[system]
model = "mp"
shards = 2
replicas = 2
objects_per_shard = 4

[[system.layout]]
members = ["p1", "p2"]
spares = ["p5"]

[[system.layout]]
members = ["p3", "p4"]

[[workload.txn]]
id = "t1"
coordinator = "p3"
objects = ["x1"]

[[workload.txn]]
id = "t2"
coordinator = "p4"
objects = ["x2"]

[faults]
script = [
  "block p3 -> p2",
  "certify t1",
  "quiet: certify t2",
  "quiet: crash p1",
  "crash p3",
  "reconfigure p4 s1",
  "quiet: unblock p3 -> p2",
]
"#;

/// The PREPARE for `s2` is held up, a follower of `s1` suspects the
/// coordinator and retries. `s2` never saw the payload and votes ABORT; the
/// original coordinator later gets the same ABORT back.
const RETRY_SPURIOUS: &str = r#"#! rcommit-scenario v1
name = "retry-spurious"

[system]
model = "mp"
shards = 2
replicas = 2
objects_per_shard = 4

[[workload.txn]]
id = "t1"
coordinator = "p1"
objects = ["x1", "x5"]

[faults]
script = [
  "block p1 -> p3",
  "certify t1",
  "quiet: retry p2 t1",
  "quiet: unblock p1 -> p3",
]
"#;

pub const NAMES: [&str; 5] = ["fig2a", "fig2b", "fig4a", "lost-txn", "retry-spurious"];

pub fn text(name: &str) -> Option<&'static str> {
    Some(match name {
        "fig2a" => FIG2A,
        "fig2b" => FIG2B,
        "fig4a" => FIG4A,
        "lost-txn" => LOST_TXN,
        "retry-spurious" => RETRY_SPURIOUS,
        _ => return None,
    })
}

pub fn get(name: &str) -> Option<Scenario> {
    text(name).map(|t| Scenario::parse(t).expect("built-in scenarios parse"))
}

/// A built-in with the model replaced, for scenarios that run under more
/// than one protocol variant.
pub fn with_model(name: &str, model: Model) -> Option<Scenario> {
    let mut sc = get(name)?;
    sc.system.model = model;
    Some(sc)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_builtins_parse_and_round_trip() {
        for n in NAMES {
            let sc = get(n).unwrap();
            assert_eq!(sc.name, n);
            assert_eq!(Scenario::parse(&sc.to_text()).unwrap(), sc);
        }
        assert!(get("nope").is_none());
    }
}
