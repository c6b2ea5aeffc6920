use std::hint::black_box;

use colocate_bench::{reference_jobs, reference_traces, small_cluster};
use colocate_core::decomp::{concentric_assign, generate_cloud, WeightVector};
use colocate_core::sim::{self, water_fill};
use colocate_core::trace::{analyze, segment_iterations, DEFAULT_SKIP_FRACTION};
use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

fn bench_water_fill(c: &mut Criterion) {
    let mut group = c.benchmark_group("water_fill");
    for pods in [8usize, 64, 512] {
        let weights: Vec<f64> = (0..pods).map(|i| 10.0 + (i % 7) as f64 * 150.0).collect();
        group.bench_with_input(BenchmarkId::from_parameter(pods), &weights, |b, w| {
            b.iter(|| water_fill(black_box(pods as f64 / 3.0), black_box(w)))
        });
    }
    group.finish();
}

fn bench_engine(c: &mut Criterion) {
    let cluster = small_cluster();
    let jobs = reference_jobs(5, 20);
    let placement = sim::place(&jobs, &cluster).expect("fixture places");
    c.bench_function("engine/5_jobs_20_iterations", |b| {
        b.iter(|| sim::run(&cluster, black_box(&jobs), &placement, 42).expect("fixture runs"))
    });
}

fn bench_decomp(c: &mut Criterion) {
    let cloud = generate_cloud(100_000, 42).expect("valid cloud");
    let weights = WeightVector::three_zone_16();
    c.bench_function("concentric_assign/100k_cells", |b| {
        b.iter(|| concentric_assign(black_box(&cloud), &weights).expect("assignable"))
    });
}

fn bench_trace(c: &mut Criterion) {
    let traces = reference_traces(200);
    c.bench_function("segment_iterations/200", |b| {
        b.iter(|| segment_iterations(black_box(&traces[0])).expect("segmentable"))
    });
    c.bench_function("analyze/16_ranks_200", |b| {
        b.iter(|| analyze(black_box(&traces), DEFAULT_SKIP_FRACTION, None::<fn(u32) -> Option<String>>).expect("analysable"))
    });
}

criterion_group!(benches, bench_water_fill, bench_engine, bench_decomp, bench_trace);
criterion_main!(benches);
