use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use vpsa_core::field::compute_density;
use vpsa_core::par;
use vpsa_core::solver::{initialize, step, SimConfig};

fn config() -> SimConfig {
    let mut c = SimConfig::default();
    c.t_end = 0.1;
    c.skip_audit = true;
    c
}

fn density(c: &mut Criterion) {
    let run = initialize(config()).unwrap();
    let mut g = c.benchmark_group("density");
    for (name, seq) in [("sequential", true), ("parallel", false)] {
        g.bench_with_input(BenchmarkId::from_parameter(name), &seq, |b, &seq| {
            par::set_force_sequential(seq);
            b.iter(|| compute_density(&run.state));
        });
    }
    par::set_force_sequential(false);
    g.finish();
}

fn first_step(c: &mut Criterion) {
    let base = initialize(config()).unwrap();
    let mut g = c.benchmark_group("step");
    g.sample_size(10);
    for (name, seq) in [("sequential", true), ("parallel", false)] {
        g.bench_with_input(BenchmarkId::from_parameter(name), &seq, |b, &seq| {
            par::set_force_sequential(seq);
            b.iter_batched(
                || initialize(base.config.clone()).unwrap(),
                |mut run| step(&mut run).unwrap(),
                criterion::BatchSize::LargeInput,
            );
        });
    }
    par::set_force_sequential(false);
    g.finish();
}

criterion_group!(benches, density, first_step);
criterion_main!(benches);
