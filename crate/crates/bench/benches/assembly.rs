use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use hho_brinkman::localops::build_all;
use hho_brinkman::system::{solve, SolverOptions};
use hho_brinkman_bench::{hexagonal, power_law_problem, triangular};

fn local_operators(c: &mut Criterion) {
    let mut g = c.benchmark_group("local_operators");
    for k in 0..=2 {
        let mesh = triangular(16);
        g.bench_with_input(BenchmarkId::new("triangular16", k), &k, |b, &k| {
            b.iter(|| build_all(&mesh, k).unwrap())
        });
        let mesh = hexagonal(16);
        g.bench_with_input(BenchmarkId::new("hexagonal16", k), &k, |b, &k| {
            b.iter(|| build_all(&mesh, k).unwrap())
        });
    }
    g.finish();
}

fn assembly(c: &mut Criterion) {
    let mut g = c.benchmark_group("assembly");
    for k in 0..=2 {
        let mesh = triangular(16);
        let (sys, x) = power_law_problem(&mesh, k);
        g.bench_with_input(BenchmarkId::new("residual", k), &k, |b, _| {
            b.iter(|| sys.residual(&x))
        });
        g.bench_with_input(BenchmarkId::new("residual_and_jacobian", k), &k, |b, _| {
            b.iter(|| sys.residual_and_jacobian(&x).unwrap())
        });
    }
    g.finish();
}

fn newton(c: &mut Criterion) {
    let mut g = c.benchmark_group("newton");
    g.sample_size(10);
    let mesh = triangular(8);
    g.bench_function("r3_k1_triangular8", |b| {
        b.iter(|| {
            let (mut sys, _) = power_law_problem(&mesh, 1);
            solve(&mut sys, &SolverOptions::default()).unwrap()
        })
    });
    g.finish();
}

criterion_group!(benches, local_operators, assembly, newton);
criterion_main!(benches);
