//! `rcommit`: run scenarios, replay traces and fuzz seeds against the
//! commit protocols and their checkers.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use rcommit::checkers::{check_trace, CheckSet, Report, Verdict, DEFAULT_ORACLE_BOUND};
use rcommit::simulator::{builtin, count_delays, fuzz, run, Model, RunResult, Scenario, Trace};
use rcommit::Serializability;

#[derive(Parser)]
#[command(name = "rcommit", version, about = "Simulate and check reconfigurable atomic commit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one scenario and check its trace.
    Run(RunArgs),
    /// Re-check a trace file offline.
    Replay(ReplayArgs),
    /// Run many seeds and keep the failing ones.
    Fuzz(FuzzArgs),
}

#[derive(Args, Clone)]
struct CheckArgs {
    /// One of all, invariants, tcsll, correctness.
    #[arg(long, default_value = "all")]
    check: CheckSet,
    /// Largest committed set the correctness oracle will search.
    #[arg(long, default_value_t = DEFAULT_ORACLE_BOUND)]
    oracle_bound: usize,
}

#[derive(Args, Clone)]
struct SimArgs {
    /// Overrides the scenario's seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the scenario's protocol variant.
    #[arg(long)]
    model: Option<Model>,
    /// Overrides the scenario's step budget.
    #[arg(long)]
    max_steps: Option<u64>,
}

#[derive(Args)]
struct RunArgs {
    /// A scenario file, or the name of a built-in scenario.
    #[arg(long)]
    scenario: String,
    #[command(flatten)]
    sim: SimArgs,
    /// Write the trace here for later replay.
    #[arg(long)]
    emit_trace: Option<PathBuf>,
    #[command(flatten)]
    checks: CheckArgs,
}

#[derive(Args)]
struct ReplayArgs {
    trace: PathBuf,
    #[command(flatten)]
    checks: CheckArgs,
}

#[derive(Args)]
struct FuzzArgs {
    /// Number of seeds to run.
    #[arg(long, default_value_t = 100)]
    seeds: u64,
    /// Seeds run from here upward. Defaults to 0, or to the scenario's seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Base scenario whose seed is varied. Without one, each seed gets a
    /// generated scenario with random crashes and reconfigurations.
    #[arg(long)]
    scenario: Option<String>,
    #[arg(long, default_value = "mp")]
    model: Model,
    #[arg(long)]
    max_steps: Option<u64>,
    /// Where failing scenarios are written.
    #[arg(long, default_value = "fuzz-failures")]
    out: PathBuf,
    #[command(flatten)]
    checks: CheckArgs,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Run(a) => cmd_run(&a),
        Command::Replay(a) => cmd_replay(&a),
        Command::Fuzz(a) => cmd_fuzz(&a),
    };
    match outcome {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn load_scenario(spec: &str) -> Result<Scenario> {
    if let Some(sc) = builtin::get(spec) {
        if !Path::new(spec).exists() {
            return Ok(sc);
        }
    }
    let text = fs::read_to_string(spec)
        .with_context(|| format!("reading scenario {spec:?} (built-ins: {})", builtin::NAMES.join(", ")))?;
    Scenario::parse(&text).with_context(|| format!("parsing scenario {spec:?}"))
}

fn apply(sc: &mut Scenario, sim: &SimArgs) {
    if let Some(s) = sim.seed {
        sc.system.seed = s;
    }
    if let Some(m) = sim.model {
        sc.system.model = m;
    }
    if let Some(n) = sim.max_steps {
        sc.system.max_steps = n;
    }
}

fn check(trace: &Trace, c: &CheckArgs) -> Result<Report> {
    Ok(check_trace(trace, c.check, &Serializability, c.oracle_bound)?)
}

fn print_report(report: &Report, trace: &Trace) {
    match &report.correctness {
        Some(Verdict::Correct(order)) => {
            let names: Vec<String> = order.iter().map(ToString::to_string).collect();
            println!("correctness: pass (serial order [{}])", names.join(", "));
        }
        Some(Verdict::Incorrect(why)) => println!("correctness: FAIL ({why})"),
        Some(Verdict::Skipped { committed, bound }) => {
            println!("correctness: skipped ({committed} committed exceeds oracle bound {bound})")
        }
        None => {}
    }
    if report.violations.is_empty() {
        println!("violations: none");
        return;
    }
    println!("violations: {}", report.violations.len());
    for v in &report.violations {
        println!("  {v}");
        for line in v.excerpt(trace).lines() {
            println!("    {line}");
        }
    }
}

fn print_run(sc: &Scenario, r: &RunResult) {
    println!("scenario {} model {} seed {}", sc.name, sc.system.model, sc.system.seed);
    let budget = if r.exhausted { " (step budget exhausted)" } else { "" };
    println!("steps: {}{budget}", r.steps);
    for (t, d) in &r.decisions {
        match count_delays(&r.trace, *t) {
            Some(n) => println!("decision {t}: {d} after {n} message delays"),
            None => println!("decision {t}: {d}"),
        }
    }
    let delays: Vec<u64> = r.decisions.keys().filter_map(|t| count_delays(&r.trace, *t)).collect();
    if let (Some(lo), Some(hi)) = (delays.iter().min(), delays.iter().max()) {
        let mean = delays.iter().sum::<u64>() as f64 / delays.len() as f64;
        println!("delays: min {lo} mean {mean:.2} max {hi} over {} transactions", delays.len());
    }
}

fn cmd_run(a: &RunArgs) -> Result<bool> {
    let mut sc = load_scenario(&a.scenario)?;
    apply(&mut sc, &a.sim);
    let r = run(&sc)?;
    if let Some(path) = &a.emit_trace {
        fs::write(path, r.trace.to_text()).with_context(|| format!("writing trace {path:?}"))?;
    }
    print_run(&sc, &r);
    let report = check(&r.trace, &a.checks)?;
    print_report(&report, &r.trace);
    Ok(report.ok())
}

fn cmd_replay(a: &ReplayArgs) -> Result<bool> {
    let text = fs::read_to_string(&a.trace).with_context(|| format!("reading trace {:?}", a.trace))?;
    let (trace, mismatches) = Trace::parse(&text).with_context(|| format!("parsing trace {:?}", a.trace))?;
    for m in &mismatches {
        println!("digest mismatch on line {}: recorded {} computed {}", m.line, m.expected, m.found);
    }
    let report = check(&trace, &a.checks)?;
    print_report(&report, &trace);
    Ok(report.ok() && mismatches.is_empty())
}

fn cmd_fuzz(a: &FuzzArgs) -> Result<bool> {
    let base = a.scenario.as_deref().map(load_scenario).transpose()?;
    let first = a.seed.or(base.as_ref().map(|b| b.system.seed)).unwrap_or(0);
    let cfg = fuzz::FuzzConfig { model: a.model, ..fuzz::FuzzConfig::default() };
    let scenario_for = |seed: u64| -> Scenario {
        let mut sc = match &base {
            Some(b) => {
                let mut sc = b.clone();
                sc.system.seed = seed;
                sc.system.model = a.model;
                sc
            }
            None => fuzz::scenario(&cfg, seed),
        };
        if let Some(n) = a.max_steps {
            sc.system.max_steps = n;
        }
        sc
    };
    let outcomes: Vec<(u64, Result<Option<String>>)> = (first..first.saturating_add(a.seeds))
        .into_par_iter()
        .map(|seed| {
            let sc = scenario_for(seed);
            let outcome = run(&sc).map_err(anyhow::Error::from).and_then(|r| {
                let report = check(&r.trace, &a.checks)?;
                Ok((!report.ok()).then(|| summarize(&report)))
            });
            (seed, outcome)
        })
        .collect();

    let mut failing = Vec::new();
    for (seed, outcome) in &outcomes {
        match outcome {
            Ok(None) => {}
            Ok(Some(why)) => failing.push((*seed, why.clone())),
            Err(e) => bail!("seed {seed}: {e:#}"),
        }
    }
    println!(
        "fuzz {} model {}: {} seeds, {} failing",
        base.as_ref().map_or("generated", |b| &b.name),
        a.model,
        a.seeds,
        failing.len()
    );
    if failing.is_empty() {
        return Ok(true);
    }
    fs::create_dir_all(&a.out).with_context(|| format!("creating {:?}", a.out))?;
    let mut index = String::new();
    for (seed, why) in &failing {
        let path = a.out.join(format!("seed-{seed}.scenario"));
        fs::write(&path, scenario_for(*seed).to_text()).with_context(|| format!("writing {path:?}"))?;
        println!("  seed {seed}: {why} -> {}", path.display());
        index.push_str(&format!("{seed}\t{why}\n"));
    }
    fs::write(a.out.join("failing-seeds.tsv"), index)?;
    Ok(false)
}

fn summarize(report: &Report) -> String {
    let mut parts: Vec<String> = report.violations.iter().map(|v| v.rule.clone()).collect();
    parts.dedup();
    if let Some(Verdict::Incorrect(_)) = &report.correctness {
        parts.push("correctness".into());
    }
    parts.join(", ")
}
