//! Decoder scaling with the object count, the interaction stage and the
//! metrics on scenes from the shipped fixtures.

use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use ivos_core::afi::{afi_masks, AfiInput};
use ivos_core::eval::bench::bench_inputs;
use ivos_core::eval::{boundary_f, generate_robot_scribbles, BinaryMask, DEFAULT_MIN_LEN};
use ivos_core::ledger::OpLedger;
use ivos_core::propagation::{decode_frame, decode_frame_per_object};
use ivos_core::synth::{benchmark_scene, generate_scene, synthetic_suite};
use ivos_core::{rasterize_strokes, EngineConfig, IdMask};

fn decoders(c: &mut Criterion) {
    let cfg = EngineConfig::default();
    let scene = generate_scene(&benchmark_scene()).unwrap();
    let mut group = c.benchmark_group("decode");
    group.sample_size(10);
    for n in [1, 5, 10, 11] {
        let (memory, queries) = bench_inputs(&scene, n, &[0, 4], &cfg).unwrap();
        let q = &queries[0];
        group.bench_with_input(BenchmarkId::new("concurrent", n), &n, |b, _| {
            b.iter(|| decode_frame(&memory, None, black_box(q), 1, &cfg).unwrap())
        });
        group.bench_with_input(BenchmarkId::new("per_object", n), &n, |b, _| {
            b.iter(|| decode_frame_per_object(&memory, None, black_box(q), 1, &cfg).unwrap())
        });
    }
    group.finish();
}

fn interaction(c: &mut Criterion) {
    let cfg = EngineConfig::default();
    let scene = generate_scene(&synthetic_suite()[0]).unwrap();
    let (h, w) = (scene.config.height, scene.config.width);
    let maps: Vec<_> = [0usize, 12]
        .iter()
        .map(|&t| {
            let strokes = generate_robot_scribbles(&IdMask::background(t, 0, h, w), &scene.gt[t], DEFAULT_MIN_LEN).unwrap();
            rasterize_strokes(&strokes, h, w, t, 1).unwrap()
        })
        .collect();
    let inputs: Vec<AfiInput<'_>> = [0usize, 12]
        .iter()
        .zip(&maps)
        .map(|(&t, m)| AfiInput { frame: &scene.frames[t], scribble: m, prev_mask: None })
        .collect();
    let mut group = c.benchmark_group("afi_masks");
    group.sample_size(10);
    group.bench_function("two_frames_96px", |b| {
        b.iter(|| afi_masks(black_box(&inputs), 3, 1, &cfg, &mut OpLedger::new()).unwrap())
    });
    group.finish();
}

fn metrics(c: &mut Criterion) {
    let scene = generate_scene(&synthetic_suite()[1]).unwrap();
    let a = BinaryMask::from_id(&scene.gt[0], 1);
    let b = BinaryMask::from_id(&scene.gt[5], 1);
    c.bench_function("boundary_f/96px", |bch| bch.iter(|| boundary_f(black_box(&a), &b, 2.0).unwrap()));
}

criterion_group!(benches, decoders, interaction, metrics);
criterion_main!(benches);
