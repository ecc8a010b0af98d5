//! Stage timings on the default rayon pool versus a single-thread pool.
//!
//! `cargo bench -p motor-focus` runs both. Building with
//! `--no-default-features` drops rayon entirely; both rows then measure the
//! sequential kernels.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use motor_focus::aggregation::{self, AggregatorState};
use motor_focus::config::PipelineConfig;
use motor_focus::ego_motion;
use motor_focus::frame_io::Frame;
use motor_focus::optical_flow::{self, FlowParams, FlowPyramid};
use motor_focus::synth::{self, MotionStep, RadialMotion, SynthSpec};
use motor_focus::{current_workers, with_workers, Pipeline, Vec2};

fn frames(size: usize, count: usize) -> Vec<Frame> {
    let spec = SynthSpec {
        width: size,
        height: size,
        frame_count: count,
        texture_seed: 1,
        texture_sigma: 1.5,
        motion: vec![MotionStep {
            theta_deg: 0.5,
            tx: 1.0,
            radial: Some(RadialMotion { foe: [size as f64 / 2.0; 2], rate: 0.02 }),
            ..Default::default()
        }],
    };
    synth::generate_sequence(&spec).unwrap().frames
}

/// The default pool (one worker per core) and a single worker. On a
/// single-core machine the two rows coincide.
fn pools() -> [(&'static str, usize); 2] {
    [("default", current_workers()), ("single", 1)]
}

fn flow(c: &mut Criterion) {
    let f = frames(512, 2);
    let params = FlowParams::default();
    let mut g = c.benchmark_group("flow_512");
    g.sample_size(20);
    for (name, workers) in pools() {
        g.bench_function(BenchmarkId::new("compute_flow", name), |b| {
            with_workers(workers, || b.iter(|| optical_flow::compute_flow(&f[0], &f[1], &params).unwrap()))
        });
        let p0 = FlowPyramid::build(&f[0], &params).unwrap();
        let p1 = FlowPyramid::build(&f[1], &params).unwrap();
        g.bench_function(BenchmarkId::new("flow_between", name), |b| {
            with_workers(workers, || b.iter(|| optical_flow::flow_between(&p0, &p1).unwrap()))
        });
    }
    g.finish();
}

fn fit(c: &mut Criterion) {
    let step = MotionStep { theta_deg: 1.0, tx: 2.0, ty: -1.0, ..Default::default() };
    let field = synth::truth_flow(&step, 512, 512);
    let (p1, p2) = ego_motion::build_correspondences(&field, 1);
    let mut g = c.benchmark_group("fit_262144");
    for (name, workers) in pools() {
        g.bench_function(BenchmarkId::new("fit_rigid", name), |b| {
            with_workers(workers, || b.iter(|| ego_motion::fit_rigid(&p1, &p2).unwrap()))
        });
    }
    g.finish();
}

fn mask(c: &mut Criterion) {
    let mut state = AggregatorState::new(10);
    for i in 0..10 {
        state.push_focus(Vec2::new(200.0 + 5.0 * i as f64, 260.0 - 3.0 * i as f64), 40.0, i);
    }
    let mut g = c.benchmark_group("mask_512");
    for (name, workers) in pools() {
        g.bench_function(BenchmarkId::new("render_mask", name), |b| {
            with_workers(workers, || b.iter(|| aggregation::render_mask(&state, 512, 512).unwrap()))
        });
    }
    g.finish();
}

fn pair(c: &mut Criterion) {
    let f = frames(512, 2);
    let mut g = c.benchmark_group("pair_512");
    g.sample_size(20);
    for (name, workers) in pools() {
        g.bench_function(BenchmarkId::new("process_pair", name), |b| {
            with_workers(workers, || {
                let mut p = Pipeline::new(PipelineConfig::default()).unwrap();
                b.iter(|| p.process_pair(&f[0], &f[1]).unwrap())
            })
        });
    }
    g.finish();
}

criterion_group!(benches, flow, fit, mask, pair);
criterion_main!(benches);
