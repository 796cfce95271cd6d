use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use area_angle::area::{compute_weights, kron_reduce, validate_area};
use area_angle::fixtures::random_grid;
use area_angle::thresholds::{sample_multi_outages, single_outage_contingencies, sweep};
use area_angle::transfer::injection_pattern;
use area_angle::Execution;

fn bench_sweep(c: &mut Criterion) {
    let fixture = random_grid(200, 7);
    let area = validate_area(&fixture.model, &fixture.area).unwrap();
    let weights = compute_weights(&kron_reduce(&fixture.model, &area).unwrap()).unwrap();
    let pattern = injection_pattern(&fixture.model, &area).unwrap();
    let singles = single_outage_contingencies(&area);
    let doubles = sample_multi_outages(&area, 2, Some(400), 1).unwrap();

    let mut group = c.benchmark_group("sweep");
    group.sample_size(10);
    for (name, set) in [("single", &singles), ("double", &doubles)] {
        for exec in [Execution::Sequential, Execution::Parallel] {
            group.bench_with_input(BenchmarkId::new(format!("{name}/{exec:?}"), set.len()), set, |b, set| {
                b.iter(|| sweep(&fixture.model, &area, &pattern, &weights, 1.0, set, exec).unwrap())
            });
        }
    }
    group.finish();
}

criterion_group!(benches, bench_sweep);
criterion_main!(benches);
