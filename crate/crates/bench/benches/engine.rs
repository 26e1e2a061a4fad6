use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use lightloop_bench::{ramp_field, toy_scene};
use lightloop_core::harness::SynthParams;
use lightloop_core::photometry::{build_warp, ReferenceGeometry};
use lightloop_core::policy::{optimize_gradient, GradientConfig};
use lightloop_core::scorer::{AggregateScorer, ScorerSpec};
use lightloop_core::{normalize_budget, relight, relight_gradient, HeadlightModel, Scorer};

fn relighting(c: &mut Criterion) {
    let scene = toy_scene();
    let (h, w) = scene.pair.dims();
    let m = ramp_field(h, w);
    c.bench_function("relight", |b| b.iter(|| relight(black_box(&scene.pair), black_box(&m)).unwrap()));
    let g = vec![1.0f32; h * w * scene.pair.channels()];
    c.bench_function("relight_gradient", |b| {
        b.iter(|| relight_gradient(black_box(&scene.pair), black_box(&g)).unwrap())
    });
}

fn scoring(c: &mut Criterion) {
    let scene = toy_scene();
    let (h, w) = scene.pair.dims();
    let image = relight(&scene.pair, &ramp_field(h, w)).unwrap();
    let mut scorer = AggregateScorer::new(&[ScorerSpec::contrast(1.0)]).unwrap();
    c.bench_function("contrast_score", |b| {
        b.iter(|| scorer.evaluate(black_box(&image), scene.pair.annotations(), false).unwrap())
    });
    c.bench_function("contrast_score_gradient", |b| {
        b.iter(|| scorer.evaluate(black_box(&image), scene.pair.annotations(), true).unwrap())
    });
}

fn budget(c: &mut Criterion) {
    let m = ramp_field(96, 192);
    c.bench_function("normalize_budget", |b| b.iter(|| normalize_budget(black_box(&m), 0.3, 1e-6).unwrap()));
}

fn warp(c: &mut Criterion) {
    let cam = SynthParams::default().camera().unwrap();
    let hl = HeadlightModel::low_beam();
    let scene = toy_scene();
    let depth = scene.pair.depth().unwrap();
    c.bench_function("warp_plane", |b| {
        b.iter(|| build_warp(black_box(&cam), &hl, ReferenceGeometry::Plane(20.0)).unwrap())
    });
    c.bench_function("warp_depth", |b| {
        b.iter(|| build_warp(black_box(&cam), &hl, ReferenceGeometry::Depth(depth)).unwrap())
    });
}

fn optimize(c: &mut Criterion) {
    let scene = toy_scene();
    let mut scorer = AggregateScorer::new(&[ScorerSpec::contrast(1.0)]).unwrap();
    let cfg = GradientConfig {
        steps: 10,
        ..Default::default()
    };
    c.bench_function("gradient_10_steps", |b| {
        b.iter(|| optimize_gradient(black_box(&scene.pair), &mut scorer, 0.1, &cfg).unwrap())
    });
}

criterion_group!(benches, relighting, scoring, budget, warp, optimize);
criterion_main!(benches);
