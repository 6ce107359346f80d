use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use dmp_bench::{dataset, model};
use dmp_core::kernels::Smoothness;
use dmp_core::numerics::matrix_exponential;
use dmp_core::oracle::dense_loglik;
use dmp_core::{kalman_filter, log_likelihood};
use dmp_core::nalgebra::DMatrix;

fn filter_scaling(c: &mut Criterion) {
    let mut group = c.benchmark_group("filter_loglik");
    for nu in [Smoothness::Half, Smoothness::ThreeHalves, Smoothness::FiveHalves] {
        let m = model(nu, 3, 0.6);
        for n in [250, 500, 1000, 2000] {
            let ds = dataset(&m, n, 1);
            group.bench_with_input(BenchmarkId::new(format!("nu{nu}"), n), &ds, |b, ds| {
                b.iter(|| log_likelihood(black_box(&m), ds, &[0.05; 3]).unwrap())
            });
        }
    }
    group.finish();
}

fn filter_vs_dense(c: &mut Criterion) {
    let mut group = c.benchmark_group("filter_vs_dense");
    group.sample_size(10);
    let m = model(Smoothness::ThreeHalves, 2, 0.8);
    for n in [100, 250, 500] {
        let ds = dataset(&m, n, 2);
        group.bench_with_input(BenchmarkId::new("filter", n), &ds, |b, ds| {
            b.iter(|| log_likelihood(&m, black_box(ds), &[0.05; 2]).unwrap())
        });
        group.bench_with_input(BenchmarkId::new("dense", n), &ds, |b, ds| {
            b.iter(|| dense_loglik(black_box(ds), m.hypers(), m.coupling(), &[0.05; 2]).unwrap())
        });
    }
    group.finish();
}

fn smoother(c: &mut Criterion) {
    let m = model(Smoothness::ThreeHalves, 3, 0.6);
    let ds = dataset(&m, 1000, 3);
    c.bench_function("filter_and_smoother_n1000", |b| {
        b.iter(|| {
            let fr = kalman_filter(&m, black_box(&ds), &[0.05; 3]).unwrap();
            dmp_core::rts_smooth(&fr).unwrap()
        })
    });
}

fn expm(c: &mut Criterion) {
    let mut group = c.benchmark_group("matrix_exponential");
    for dim in [2usize, 6, 9] {
        let q = DMatrix::from_fn(dim, dim, |i, j| if i == j { -1.0 } else { 0.1 / (1 + i + j) as f64 });
        group.bench_with_input(BenchmarkId::from_parameter(dim), &q, |b, q| {
            b.iter(|| matrix_exponential(black_box(q), 0.7))
        });
    }
    group.finish();
}

criterion_group!(benches, filter_scaling, filter_vs_dense, smoother, expm);
criterion_main!(benches);
