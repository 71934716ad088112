use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion};

use cmcgrad::{newton_solve, SolveOptions};
use cmcgrad_bench::{ball_problem, ellipse_problem, seed};

fn derivatives(c: &mut Criterion) {
    let mut group = c.benchmark_group("derivatives");
    for n in [16, 32, 64] {
        let spec = ellipse_problem(n, 2 * n);
        let u = seed(&spec).u;
        group.bench_with_input(BenchmarkId::from_parameter(n), &n, |b, _| {
            b.iter(|| spec.grid.derivatives(black_box(&u)).unwrap())
        });
    }
    group.finish();
}

fn assembly(c: &mut Criterion) {
    let mut group = c.benchmark_group("assembly");
    for n in [16, 32] {
        let spec = ellipse_problem(n, 2 * n);
        let f = seed(&spec);
        group.bench_with_input(BenchmarkId::new("residual", n), &n, |b, _| {
            b.iter(|| spec.residual(black_box(&f.u), f.c).unwrap())
        });
        group.bench_with_input(BenchmarkId::new("jacobian", n), &n, |b, _| {
            b.iter(|| spec.jacobian_triplets(black_box(&f.u)).unwrap())
        });
    }
    group.finish();
}

fn solve(c: &mut Criterion) {
    let mut group = c.benchmark_group("solve");
    group.sample_size(10);
    let opts = SolveOptions::default();
    for (name, spec) in [("balls_16", ball_problem(16, 32)), ("ellipse_16", ellipse_problem(16, 32))] {
        let start = seed(&spec);
        group.bench_function(name, |b| b.iter(|| newton_solve(&spec, black_box(&start), &opts).unwrap()));
    }
    group.finish();
}

criterion_group!(benches, derivatives, assembly, solve);
criterion_main!(benches);
