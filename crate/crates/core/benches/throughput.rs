//! Parallel versus single-threaded throughput of the hot paths.
//!
//! With the default `parallel` feature every benchmark runs twice: once in a
//! one-thread rayon pool and once in the global pool. Built with
//! `--no-default-features` the library never touches rayon and the same
//! benchmarks measure the plain sequential code.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use epigeom::fivepoint::{ransac_essential, RansacConfig};
use epigeom::geometry::{essential_from_pose, PoseSE3};
use epigeom::losses::{evaluate, LossInputs, LossState, LossWeights};
use epigeom::par;
use epigeom::raster::ImageBuffer;
use epigeom::refine::perturb_pose;
use epigeom::synthetic::{exact_correspondences, render_pair, static_scene};
use epigeom::warp::synthesize_view;
use nalgebra::Vector3;

fn pose() -> PoseSE3 {
    PoseSE3::from_axis_angle(&Vector3::new(0.0, 0.03, 0.0), Vector3::new(0.8, 0.0, 0.2))
}

/// Runs `f` under each execution mode available in this build.
fn modes(c: &mut Criterion, group: &str, f: impl Fn() + Sync) {
    let mut g = c.benchmark_group(group);
    if par::is_parallel() {
        let single = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        g.bench_function(BenchmarkId::new("single_thread", 1), |b| b.iter(|| single.install(&f)));
        let n = rayon::current_num_threads();
        g.bench_function(BenchmarkId::new("global_pool", n), |b| b.iter(&f));
    } else {
        g.bench_function("sequential", |b| b.iter(&f));
    }
    g.finish();
}

fn loss_gradient(c: &mut Criterion) {
    let scene = static_scene(128, 96, 0.5, 1);
    let truth = pose();
    let pair = render_pair(&scene, &truth).unwrap();
    let sources = vec![pair.source.image.clone()];
    let essentials = vec![Some(essential_from_pose(&truth).unwrap())];
    let inputs = LossInputs {
        target: &pair.target.image,
        sources: &sources,
        essentials: &essentials,
        k: scene.intrinsics,
        weights: LossWeights::default(),
    };
    let state = LossState {
        inv_depths: vec![pair.target.depth.to_inverse()],
        poses: vec![perturb_pose(&truth, 0.01, 0.02, 1)],
    };
    modes(c, "loss_gradient_128x96", || {
        evaluate(&inputs, &state, true).unwrap();
    });
}

fn warp(c: &mut Criterion) {
    let scene = static_scene(640, 480, 0.5, 2);
    let pair = render_pair(&scene, &pose()).unwrap();
    let src: &ImageBuffer = &pair.source.image;
    modes(c, "warp_640x480", || {
        synthesize_view(src, &pair.target.depth, &pose(), &scene.intrinsics).unwrap();
    });
}

fn ransac(c: &mut Criterion) {
    let scene = static_scene(640, 480, 0.5, 3);
    let k = scene.intrinsics;
    let m = exact_correspondences(&scene, &PoseSE3::identity(), &pose(), 500, 0.5, 0.5, 3).unwrap();
    // A tight confidence keeps early exit from cutting the run short.
    let cfg = RansacConfig {
        confidence: 1.0 - 1e-12,
        ..Default::default()
    };
    modes(c, "ransac_500_matches", || {
        ransac_essential(&m.matches, &k, &k, &cfg).unwrap();
    });
}

criterion_group! {
    name = benches;
    config = Criterion::default().sample_size(10);
    targets = loss_gradient, warp, ransac
}
criterion_main!(benches);
