use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use rcommit::checkers::{check_trace, CheckSet, DEFAULT_ORACLE_BOUND};
use rcommit::simulator::fuzz::{scenario, FuzzConfig};
use rcommit::simulator::{builtin, run, Model};
use rcommit::Serializability;

fn simulate(c: &mut Criterion) {
    let mut g = c.benchmark_group("simulate");
    let fig2a = builtin::get("fig2a").unwrap();
    g.bench_function("fig2a", |b| b.iter(|| run(black_box(&fig2a)).unwrap()));
    for model in [Model::Mp, Model::Rdma] {
        let cfg = FuzzConfig { model, ..FuzzConfig::default() };
        g.bench_function(format!("fuzz-seed/{model}"), |b| {
            b.iter_batched(|| scenario(&cfg, 7), |sc| run(&sc).unwrap(), BatchSize::SmallInput)
        });
    }
    g.finish();
}

fn check(c: &mut Criterion) {
    let mut g = c.benchmark_group("check");
    for model in [Model::Mp, Model::Rdma] {
        let tr = run(&scenario(&FuzzConfig { model, ..FuzzConfig::default() }, 7)).unwrap().trace;
        g.bench_function(format!("all/{model}"), |b| {
            b.iter(|| check_trace(black_box(&tr), CheckSet::All, &Serializability, DEFAULT_ORACLE_BOUND).unwrap())
        });
    }
    g.finish();
}

criterion_group!(benches, simulate, check);
criterion_main!(benches);
