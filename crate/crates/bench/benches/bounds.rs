use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use papl_bench::instance;
use papl_core::{
    elbo_greedy, elbo_p2_topk, elbo_softmax, elbo_uniform_timestep_form, exact_terminal_distribution, p_elbo, EvalMode,
    PositionPlanner, SetPlanner,
};
use std::hint::black_box;

fn exact_laws(c: &mut Criterion) {
    let mut g = c.benchmark_group("exact_terminal_distribution");
    for len in [3, 4, 5] {
        let (den, _) = instance(1, 3, len);
        for planner in [PositionPlanner::Uniform, PositionPlanner::Greedy, PositionPlanner::SoftGreedy { tau: 0.5 }] {
            g.bench_with_input(BenchmarkId::new(planner.name(), len), &den, |b, den| {
                b.iter(|| exact_terminal_distribution(black_box(den), &planner, 1).unwrap())
            });
        }
    }
    g.finish();
}

fn bounds(c: &mut Criterion) {
    let mut g = c.benchmark_group("bounds");
    let (den, x0) = instance(2, 3, 4);
    g.bench_function("uniform", |b| b.iter(|| elbo_uniform_timestep_form(black_box(&den), &x0).unwrap()));
    g.bench_function("p_elbo_greedy", |b| {
        b.iter(|| p_elbo(black_box(&den), &PositionPlanner::Greedy, &x0, EvalMode::Exact).unwrap())
    });
    g.bench_function("greedy_path", |b| b.iter(|| elbo_greedy(black_box(&den), &x0).unwrap()));
    g.bench_function("softmax", |b| b.iter(|| elbo_softmax(black_box(&den), 1.0, &x0, EvalMode::Exact).unwrap()));
    let (den3, x3) = instance(3, 3, 3);
    g.bench_function("p2_topk", |b| {
        b.iter(|| elbo_p2_topk(black_box(&den3), &SetPlanner::P2TopK { eta: 1.0 }, &x3).unwrap())
    });
    g.finish();
}

criterion_group!(benches, exact_laws, bounds);
criterion_main!(benches);
