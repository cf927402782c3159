use criterion::{criterion_group, criterion_main, Criterion};
use num_complex::Complex64;

use stationary_discs::disc_solver::{canonical_disc, SolverConfig, Truncation};
use stationary_discs::fibration::{central_lift, matrix_b, matrix_k, SphereConormal};
use stationary_discs::linalg::complex_form;
use stationary_discs::parallel::{map_parallel, map_sequential};
use stationary_discs::riemann_hilbert::partial_indices;
use stationary_discs::structures::{sample_polynomial, sphere_samples};

fn canonical_discs(c: &mut Criterion) {
    let lambda = 0.01;
    let structure = sample_polynomial(2, lambda, 1.0).unwrap();
    let config = SolverConfig {
        truncation: Truncation::with_modes(16),
        step: lambda,
        max_step: lambda,
        ..SolverConfig::default()
    };
    let directions: Vec<Vec<Complex64>> = sphere_samples(4, 4, 1).iter().map(|x| complex_form(x)).collect();
    let solve = |u: &Vec<Complex64>| canonical_disc(&structure, u, &config).unwrap().residuals.boundary;

    let mut group = c.benchmark_group("canonical_discs");
    group.sample_size(10);
    group.bench_function("sequential", |b| b.iter(|| map_sequential(&directions, solve)));
    group.bench_function("parallel", |b| b.iter(|| map_parallel(&directions, solve)));
    group.finish();
}

fn index_probes(c: &mut Criterion) {
    let loops: Vec<_> = (2..=5)
        .map(|n| matrix_b(&matrix_k(&SphereConormal::new(n).unwrap(), &central_lift(n, 64)).unwrap()).unwrap())
        .collect();
    let probe = |b: &_| partial_indices(b).unwrap().maslov;

    let mut group = c.benchmark_group("index_probes");
    group.bench_function("sequential", |b| b.iter(|| map_sequential(&loops, probe)));
    group.bench_function("parallel", |b| b.iter(|| map_parallel(&loops, probe)));
    group.finish();
}

criterion_group!(benches, canonical_discs, index_probes);
criterion_main!(benches);
