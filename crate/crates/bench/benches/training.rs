use criterion::{criterion_group, criterion_main, Criterion};
use papl_bench::toy_batch;
use papl_core::{loss_and_grad, LossKind};
use std::hint::black_box;

fn gradients(c: &mut Criterion) {
    let mut g = c.benchmark_group("loss_and_grad");
    let (den, batch) = toy_batch(9, 16);
    for (name, kind, detach) in [
        ("vanilla", LossKind::Vanilla, true),
        ("papl_detached", LossKind::Papl { alpha: 1.0, tau: 1.0 }, true),
        ("papl_full", LossKind::Papl { alpha: 1.0, tau: 1.0 }, false),
    ] {
        g.bench_function(name, |b| b.iter(|| loss_and_grad(black_box(&den), &kind, &batch, detach).unwrap()));
    }
    g.finish();
}

criterion_group!(benches, gradients);
criterion_main!(benches);
