//! Parallel core against a one-thread pool. For the rayon-free build run
//! `cargo bench -p wrlab-core --no-default-features`.

use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use num_complex::Complex64;
use wrlab::geometry::{SampleGrid, SurfaceFunction};
use wrlab::oscint::{extend_direct, extend_slices, Grid3, QuadratureRule};

fn input() -> SurfaceFunction {
    SurfaceFunction::from_fn(SampleGrid::unit_disk(128), None, |w| {
        Complex64::new((1.0 - w[0] * w[0] - w[1] * w[1]).max(0.0), 0.5 * w[0])
    })
}

fn extension(c: &mut Criterion) {
    let f = input();
    let grid = Grid3::cube([0.0, 0.0, 0.0], 2.0, 8).unwrap();
    let rule = QuadratureRule::midpoint_on(&f.grid).unwrap();
    let nodes = grid.nodes();
    let pools = [
        ("parallel", rayon::ThreadPoolBuilder::new().build().unwrap()),
        ("sequential", rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap()),
    ];
    let mut group = c.benchmark_group("extension");
    group.sample_size(10);
    for (name, pool) in &pools {
        group.bench_with_input(BenchmarkId::new("direct", name), pool, |b, pool| {
            b.iter(|| pool.install(|| extend_direct(black_box(&f), &nodes, &rule).unwrap()))
        });
        group.bench_with_input(BenchmarkId::new("slices", name), pool, |b, pool| {
            b.iter(|| pool.install(|| extend_slices(black_box(&f), &grid).unwrap()))
        });
    }
    group.finish();
}

criterion_group!(benches, extension);
criterion_main!(benches);
