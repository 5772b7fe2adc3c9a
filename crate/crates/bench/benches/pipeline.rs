use criterion::{criterion_group, criterion_main, Criterion};
use std::hint::black_box;

use headgen::audio::extract_features;
use headgen::driver::{init_weights, predict_residuals};
use headgen::metrics::{frechet_distance, gaussian_stats};
use headgen::renderer::toy_render;
use headgen::{DriverConfig, Mode};
use headgen_bench::{card, tilted, tone};
use ndarray::Array2;

fn features(c: &mut Criterion) {
    let clip = tone(6.0, 16_000);
    c.bench_function("extract_features 6s", |b| {
        b.iter(|| extract_features(black_box(&clip), 30.0).unwrap())
    });
}

fn driver(c: &mut Criterion) {
    let feats = extract_features(&tone(3.0, 16_000), 30.0).unwrap();
    let mut group = c.benchmark_group("driver forward 90 frames");
    for hidden in [64, 256] {
        let w = init_weights(&DriverConfig::default().with_hidden(hidden), 0).unwrap();
        group.bench_function(format!("hidden {hidden}"), |b| {
            b.iter(|| predict_residuals(&w, black_box(&feats), Mode::Infer, None).unwrap())
        });
    }
    group.finish();
}

fn render(c: &mut Criterion) {
    let frame = card(128);
    let params = tilted();
    c.bench_function("toy_render 128x128", |b| {
        b.iter(|| toy_render(black_box(&frame), &params).unwrap())
    });
}

fn frechet(c: &mut Criterion) {
    let x = Array2::from_shape_fn((200, 16), |(i, k)| ((i * 16 + k) as f64 * 0.37).sin());
    let y = Array2::from_shape_fn((200, 16), |(i, k)| ((i * 16 + k) as f64 * 0.53).cos());
    let (p, q) = (
        gaussian_stats(x.view()).unwrap(),
        gaussian_stats(y.view()).unwrap(),
    );
    c.bench_function("frechet 16-d", |b| {
        b.iter(|| frechet_distance(black_box(&p), black_box(&q)).unwrap())
    });
}

criterion_group!(benches, features, driver, render, frechet);
criterion_main!(benches);
