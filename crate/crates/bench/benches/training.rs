use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use xmhash_bench::dataset;
use xmhash_core::kernel::KernelModel;
use xmhash_core::{train, HyperParams, Modality};

criterion_group! {
    name = benches;
    config = Criterion::default().sample_size(10);
    targets = kernelize, training
}
criterion_main!(benches);

fn kernelize(c: &mut Criterion) {
    let data = dataset(2_000, 2);
    let kernel = KernelModel::fit(&data.x1, &data.x2, 500, 0).unwrap();
    c.bench_function("kernelize 2000 x 500 anchors", |b| {
        b.iter(|| kernel.transform(Modality::First, black_box(&data.x1)).unwrap())
    });
}

fn training(c: &mut Criterion) {
    let mut group = c.benchmark_group("train 5 iterations");
    for n in [1_000, 4_000] {
        let data = dataset(n, 3);
        let kernel = KernelModel::fit(&data.x1, &data.x2, 300, 0).unwrap();
        let phi1 = kernel.transform(Modality::First, &data.x1).unwrap();
        let phi2 = kernel.transform(Modality::Second, &data.x2).unwrap();
        let mut hp = HyperParams::with_lengths(&[16, 32, 64]);
        hp.max_iter = 5;
        hp.tol = 1e-300;
        group.bench_with_input(BenchmarkId::from_parameter(n), &n, |b, _| {
            b.iter(|| train(&phi1, &phi2, &data.labels, &hp).unwrap())
        });
    }
    group.finish();
}
