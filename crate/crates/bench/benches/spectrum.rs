use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use erank_bench::random_reps;
use erank_core::{covariance_spectrum, erank_general, DMatrix, SpectrumRoute};

// short sentences in wide models favour the Gram route; long ones in narrow models the dense one
const SHAPES: [(usize, usize); 4] = [(16, 768), (64, 768), (256, 256), (512, 64)];

fn routes(c: &mut Criterion) {
    let mut group = c.benchmark_group("covariance_spectrum");
    group.sample_size(10);
    for (n, d) in SHAPES {
        let reps = random_reps(n, d, (n * d) as u64);
        for (name, route) in [("dense", SpectrumRoute::Dense), ("gram", SpectrumRoute::Gram), ("auto", SpectrumRoute::Auto)] {
            group.bench_with_input(BenchmarkId::new(name, format!("{n}x{d}")), &reps, |b, reps| {
                b.iter(|| covariance_spectrum(black_box(reps), route).unwrap().spectrum.entropy())
            });
        }
    }
    group.finish();
}

fn general(c: &mut Criterion) {
    let reps = random_reps(128, 256, 7);
    let m = DMatrix::from_row_slice(128, 256, reps.data());
    c.bench_function("erank_general/128x256", |b| b.iter(|| erank_general(black_box(&m)).unwrap()));
}

criterion_group!(benches, routes, general);
criterion_main!(benches);
