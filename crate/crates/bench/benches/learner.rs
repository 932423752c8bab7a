use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use etvfa_bench::{batch, continuous, grid};
use etvfa_core::learner::{run_inner_loop, stochastic_gradient};
use etvfa_core::trigger::{estimated_gain_eq17, oracle_gain};
use etvfa_core::TriggerKind;

fn gradients(c: &mut Criterion) {
    let mut group = c.benchmark_group("gradient");
    for (name, exp) in [("grid", grid().unwrap()), ("continuous", continuous(1000).unwrap())] {
        let p = &exp.problem;
        let tuples = batch(&exp, 3).unwrap();
        let w = exp.hyper.initial(p.dim());
        group.bench_function(name, |b| {
            b.iter(|| stochastic_gradient(black_box(&w), &tuples, &p.basis, &p.v_current, p.env.gamma()))
        });
    }
    group.finish();
}

fn gains(c: &mut Criterion) {
    let exp = continuous(1000).unwrap();
    let p = &exp.problem;
    let tuples = batch(&exp, 3).unwrap();
    let w = exp.hyper.initial(p.dim());
    let g = p.gradient(&w, &tuples);
    let eps = exp.hyper.epsilon;
    let mut group = c.benchmark_group("gain");
    group.bench_function("eq17", |b| {
        b.iter(|| estimated_gain_eq17(black_box(&g), &tuples, &p.basis, eps).unwrap())
    });
    group.bench_function("oracle", |b| b.iter(|| oracle_gain(&w, black_box(&g), eps, &p.objective)));
    group.finish();
}

fn inner_loop(c: &mut Criterion) {
    let mut group = c.benchmark_group("inner_loop");
    group.sample_size(20);
    let exp = grid().unwrap();
    for kind in [TriggerKind::Oracle, TriggerKind::Always] {
        let policy = exp.policy(kind, 0.1).unwrap();
        group.bench_function(format!("grid_{}", kind.name()), |b| {
            b.iter(|| run_inner_loop(&exp.problem, &exp.hyper, &policy, black_box(7)).unwrap())
        });
    }
    let exp = continuous(1000).unwrap();
    let policy = exp.configured_policy().unwrap();
    group.bench_function("continuous_eq17", |b| {
        b.iter(|| run_inner_loop(&exp.problem, &exp.hyper, &policy, black_box(7)).unwrap())
    });
    group.finish();
}

criterion_group!(benches, gradients, gains, inner_loop);
criterion_main!(benches);
