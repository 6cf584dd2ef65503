use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion, Throughput};
use ivos_bench::random_tensor;
use ivos_core::rng::SeededRng;
use ivos_core::{bilinear_sample, multi_head_attention, softmax_rows, SamplePoint, Tensor};
use std::hint::black_box;

fn softmax(c: &mut Criterion) {
    let mut rng = SeededRng::new(1);
    let mut group = c.benchmark_group("softmax_rows");
    for cols in [64, 576, 2304] {
        let t = random_tensor(&mut rng, 256, cols, false);
        group.throughput(Throughput::Elements((256 * cols) as u64));
        group.bench_with_input(BenchmarkId::from_parameter(cols), &t, |b, t| b.iter(|| softmax_rows(black_box(t))));
    }
    group.finish();
}

fn attention(c: &mut Criterion) {
    let mut rng = SeededRng::new(2);
    let mut group = c.benchmark_group("multi_head_attention");
    for (nq, nk) in [(576, 576), (576, 1152)] {
        let q = random_tensor(&mut rng, nq, 20, true);
        let k = random_tensor(&mut rng, nk, 20, true);
        let v = random_tensor(&mut rng, nk, 20, false);
        group.bench_function(BenchmarkId::new("heads2", format!("{nq}x{nk}")), |b| {
            b.iter(|| multi_head_attention(black_box(&q), &k, &v, 2, 0.05))
        });
    }
    group.finish();
}

fn bilinear(c: &mut Criterion) {
    let mut rng = SeededRng::new(3);
    let data: Vec<f32> = (0..24 * 24 * 20).map(|_| rng.uniform(-1.0, 1.0) as f32).collect();
    let map = Tensor::new(vec![24, 24, 20], data).unwrap();
    let points: Vec<SamplePoint> = (0..1024)
        .map(|_| SamplePoint::new(rng.uniform(-1.0, 25.0) as f32, rng.uniform(-1.0, 25.0) as f32))
        .collect();
    c.bench_function("bilinear_sample/1024pts", |b| {
        b.iter(|| {
            for p in &points {
                black_box(bilinear_sample(&map, *p).unwrap());
            }
        })
    });
}

criterion_group!(benches, softmax, attention, bilinear);
criterion_main!(benches);
