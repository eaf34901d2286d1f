use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion, Throughput};
use erank_bench::random_reps;
use erank_core::{read_tensor, write_tensor, TensorFile};

fn tensor_io(c: &mut Criterion) {
    let (n, d) = (128, 4096);
    let reps = random_reps(n, d, 1);
    let f32s = TensorFile::matrix_f32(n, d, reps.data().iter().map(|v| *v as f32).collect()).unwrap();
    let f64s = TensorFile::matrix_f64(n, d, reps.data().to_vec()).unwrap();
    let dir = tempfile::tempdir().unwrap();

    let mut group = c.benchmark_group("npy");
    for (name, t) in [("f32", &f32s), ("f64", &f64s)] {
        let path = dir.path().join(format!("{name}.npy"));
        group.throughput(Throughput::Bytes(t.to_bytes().len() as u64));
        group.bench_function(format!("write/{name}"), |b| b.iter(|| write_tensor(black_box(t), &path).unwrap()));
        write_tensor(t, &path).unwrap();
        group.bench_function(format!("read/{name}"), |b| b.iter(|| read_tensor(black_box(&path)).unwrap()));
    }
    group.finish();
}

criterion_group!(benches, tensor_io);
criterion_main!(benches);
