use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use hyqa_bench::dickson_hamiltonian;
use hyqa_core::eigensolver::{eigenpairs_at, LanczosOptions};
use hyqa_core::rates::{rate_convolution, rate_time_domain, single_qubit_pair};
use hyqa_core::BathParams;

fn matvec(c: &mut Criterion) {
    let ham = dickson_hamiltonian();
    let op = ham.at(0.6).unwrap();
    let x: Vec<f64> = (0..op.dim()).map(|i| (i as f64).sin()).collect();
    let mut y = vec![0.0; op.dim()];
    c.bench_function("apply_16q", |b| b.iter(|| op.apply_into(black_box(&x), &mut y).unwrap()));
}

fn eigensolver(c: &mut Criterion) {
    let ham = dickson_hamiltonian();
    let opts = LanczosOptions::default();
    let base = eigenpairs_at(&ham, 0.6, 4, &opts, None).unwrap();
    let mut g = c.benchmark_group("lanczos_16q");
    g.sample_size(10);
    g.bench_function("warm_k4", |b| {
        b.iter(|| eigenpairs_at(&ham, black_box(0.602), 4, &opts, Some(&base)).unwrap())
    });
    g.finish();
}

fn rates(c: &mut Criterion) {
    let bath = BathParams::from_width(10.0, 0.1, 8e4, 10.0).unwrap();
    let pc = single_qubit_pair(30.0, 5.0).unwrap();
    c.bench_function("rate_convolution", |b| b.iter(|| rate_convolution(black_box(&pc), &bath).unwrap()));
    c.bench_function("rate_time_domain", |b| b.iter(|| rate_time_domain(black_box(&pc), &bath).unwrap()));
}

criterion_group!(benches, matvec, eigensolver, rates);
criterion_main!(benches);
