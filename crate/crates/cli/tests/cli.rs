use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn rcommit(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rcommit")).args(args).output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn fig2a_succeeds_with_five_delays() {
    let o = rcommit(&["run", "--scenario", "fig2a"]);
    assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));
    assert!(stdout(&o).contains("decision t1: COMMIT after 5 message delays"));
}

#[test]
fn naive_fig4a_exits_nonzero_with_inv4b_counterexample() {
    let o = rcommit(&["run", "--scenario", "fig4a", "--model", "naive-rdma"]);
    assert_eq!(o.status.code(), Some(1));
    let out = stdout(&o);
    assert!(out.contains("inv4b: t1 externalized as both"), "{out}");
    assert!(out.contains("DECISION_CLIENT"), "counterexample lines are printed");
}

#[test]
fn guarded_fig4a_passes() {
    let o = rcommit(&["run", "--scenario", "fig4a", "--model", "rdma"]);
    assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));
}

#[test]
fn empty_workload_succeeds_with_empty_history() {
    let dir = tempfile::tempdir().unwrap();
    let sc = dir.path().join("empty.scenario");
    fs::write(&sc, "#! rcommit-scenario v1\nname = \"empty\"\n\n[system]\nmodel = \"mp\"\nshards = 2\nreplicas = 2\n\n[workload]\ntransactions = 0\n").unwrap();
    let o = rcommit(&["run", "--scenario", path(&sc)]);
    assert_eq!(o.status.code(), Some(0), "{}{}", stdout(&o), String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).contains("serial order []"));
    assert!(!stdout(&o).contains("decision "));
}

#[test]
fn malformed_scenario_names_the_line() {
    let dir = tempfile::tempdir().unwrap();
    let sc = dir.path().join("bad.scenario");
    fs::write(&sc, "#! rcommit-scenario v1\n[system]\nmodel = \"mp\"\nshards = \"two\"\n").unwrap();
    let o = rcommit(&["run", "--scenario", path(&sc)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("line 4"));
}

#[test]
fn replay_passes_and_is_idempotent() {
    let dir = tempfile::tempdir().unwrap();
    let tr = dir.path().join("fig2b.trace");
    assert!(rcommit(&["run", "--scenario", "fig2b", "--emit-trace", path(&tr)]).status.success());
    let a = rcommit(&["replay", path(&tr)]);
    let b = rcommit(&["replay", path(&tr)]);
    assert_eq!(a.status.code(), Some(0), "{}", stdout(&a));
    assert_eq!(a.stdout, b.stdout);
}

#[test]
fn replay_rejects_another_trace_version() {
    let dir = tempfile::tempdir().unwrap();
    let tr = dir.path().join("t.trace");
    assert!(rcommit(&["run", "--scenario", "fig2a", "--emit-trace", path(&tr)]).status.success());
    let text = fs::read_to_string(&tr).unwrap().replacen("rcommit-trace v1", "rcommit-trace v2", 1);
    fs::write(&tr, text).unwrap();
    let o = rcommit(&["replay", path(&tr)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("unsupported trace header"));
}

#[test]
fn replay_of_a_flipped_decision_fails_unique_decisions() {
    let dir = tempfile::tempdir().unwrap();
    let tr = dir.path().join("t.trace");
    assert!(rcommit(&["run", "--scenario", "fig2a", "--emit-trace", path(&tr)]).status.success());
    let text = fs::read_to_string(&tr).unwrap();
    let mut flipped = false;
    let lines: Vec<String> = text
        .lines()
        .map(|l| {
            if !flipped && l.contains("\"kind\":\"DECISION\"") {
                flipped = true;
                l.replace("\"d\":\"commit\"", "\"d\":\"abort\"")
            } else {
                l.to_string()
            }
        })
        .collect();
    assert!(flipped);
    fs::write(&tr, lines.join("\n")).unwrap();
    let o = rcommit(&["replay", path(&tr), "--check", "invariants"]);
    assert_eq!(o.status.code(), Some(1));
    let out = stdout(&o);
    assert!(out.contains("inv4a: s1 slot 1 sent both COMMIT and ABORT"), "{out}");
    assert!(out.contains("digest mismatch"));
}

#[test]
fn fuzz_of_zero_seeds_is_a_pass() {
    let o = rcommit(&["fuzz", "--seeds", "0"]);
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).contains("0 seeds, 0 failing"));
}

#[test]
fn fuzz_stores_failing_seeds_that_reproduce_exactly() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("failures");
    let o = rcommit(&["fuzz", "--seeds", "40", "--model", "naive-rdma", "--out", path(&out)]);
    assert_eq!(o.status.code(), Some(1), "naive-rdma fuzzing finds violations");
    let index = fs::read_to_string(out.join("failing-seeds.tsv")).unwrap();
    let seed = index.lines().next().unwrap().split('\t').next().unwrap();
    let sc = out.join(format!("seed-{seed}.scenario"));
    let (a, b) = (dir.path().join("a.trace"), dir.path().join("b.trace"));
    assert_eq!(rcommit(&["run", "--scenario", path(&sc), "--emit-trace", path(&a)]).status.code(), Some(1));
    assert_eq!(rcommit(&["run", "--scenario", path(&sc), "--emit-trace", path(&b)]).status.code(), Some(1));
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
}

#[test]
fn fuzz_over_a_base_scenario_varies_only_the_seed() {
    let o = rcommit(&["fuzz", "--seeds", "20", "--scenario", "fig2b"]);
    assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));
    assert!(stdout(&o).contains("fuzz fig2b model mp: 20 seeds, 0 failing"));
}
