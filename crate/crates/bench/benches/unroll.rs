use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};

use unroll_bench::{suite, unrolled};
use unroll_core::decoder::{decode, DecoderConfig};
use unroll_core::evalharness::{SuiteKind, SuiteSpec};
use unroll_core::microworld::render::render_view_sized;
use unroll_core::policy::{Engine, Pipeline, PolicyConfig};
use unroll_core::workspace::{replay, Workspace};

fn compose(c: &mut Criterion) {
    let (_, run) = unrolled(SuiteKind::Spatial, "combined");
    let items: Vec<_> = run.workspace.items().iter().map(|i| (**i).clone()).collect();
    let empty = Workspace::new(1 << 20).unwrap();
    c.bench_function("compose_combined_items", |b| b.iter(|| empty.compose(black_box(&items)).unwrap()));
    c.bench_function("replay_combined_trace", |b| b.iter(|| replay(black_box(&run.trace)).unwrap()));
}

fn render(c: &mut Criterion) {
    let s = suite(SuiteKind::Spatial, 1);
    let t = &s.tasks[0];
    let cam = &t.spec.cameras[0];
    c.bench_function("render_64x64", |b| b.iter(|| render_view_sized(&t.scene, black_box(cam), 64, 64)));
}

fn run_unroll(c: &mut Criterion) {
    let s = suite(SuiteKind::Spatial, 1);
    let t = &s.tasks[0];
    let engine = Engine::default();
    let cfg = PolicyConfig::default();
    for name in ["direct", "plus_pose_text", "plus_nvs_visual"] {
        let p = Pipeline::preset(name).unwrap();
        c.bench_function(&format!("run_unroll_{name}"), |b| {
            b.iter(|| engine.run_unroll(&t.input(), &t.scene, &p, &cfg).unwrap())
        });
    }
}

fn decode_answer(c: &mut Criterion) {
    let cfg = DecoderConfig::default();
    for (kind, name) in [(SuiteKind::Spatial, "combined"), (SuiteKind::Depth, "depth_caption_tokens")] {
        let (s, run) = unrolled(kind, name);
        let x = s.tasks[0].input();
        c.bench_function(&format!("decode_{}", kind.as_str()), |b| {
            b.iter(|| decode(&x, black_box(&run.workspace), &cfg))
        });
    }
}

fn build_suite(c: &mut Criterion) {
    c.bench_function("build_generation_suite_50", |b| {
        b.iter(|| SuiteSpec::new(SuiteKind::Generation, black_box(7), 50).build().unwrap())
    });
}

criterion_group!(benches, compose, render, run_unroll, decode_answer, build_suite);
criterion_main!(benches);
