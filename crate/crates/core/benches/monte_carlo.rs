use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use mimo_ep::harness::{monte_carlo, Execution, SimConfig, Variant};

fn small_config() -> SimConfig {
    SimConfig {
        eb_n0_db: vec![8.0],
        variants: vec![Variant::EpQaL, Variant::BpGa],
        trials: 8,
        turbo_iters: 4,
        ..SimConfig::default()
    }
}

fn execution_modes(c: &mut Criterion) {
    let cfg = small_config();
    #[cfg(feature = "parallel")]
    let modes = [("sequential", Execution::Sequential), ("parallel", Execution::Parallel { workers: 0 })];
    #[cfg(not(feature = "parallel"))]
    let modes = [("sequential", Execution::Sequential)];

    let mut group = c.benchmark_group("monte_carlo");
    group.sample_size(10);
    for (name, exec) in modes {
        group.bench_with_input(BenchmarkId::new(name, cfg.trials), &exec, |b, &exec| {
            b.iter(|| monte_carlo(black_box(&cfg), exec).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, execution_modes);
criterion_main!(benches);
