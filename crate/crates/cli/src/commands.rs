use std::fs;
use std::path::{Path, PathBuf};

use epigeom::fivepoint::{decompose_essential, ransac_essential, triangulate, RansacResult};
use epigeom::geometry::{essential_from_pose, so3_log, CameraIntrinsics, EssentialMatrix, PoseSE3};
use epigeom::io;
use epigeom::losses::{total_loss, LevelTerms};
use epigeom::metrics::{eval_depth_batch, eval_trajectory, mean_std, DepthEvalResult};
use epigeom::raster::{DepthMap, ImageBuffer, InverseDepthMap};
use epigeom::refine::{perturb_pose, refine_with_truth, PoseError, RefineTrace, StopReason};
use epigeom::synthetic::{
    box_object, exact_correspondences, inject_moving_object, random_pose, render_pair,
    static_scene, SceneSpec,
};
use epigeom::Error;
use nalgebra::{Matrix3, Vector3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::config::{require_file, RunConfig};
use crate::error::{code, CliError, CliResult, Context};
use crate::{Common, EstimateArgs, EvalDepthArgs, EvalPoseArgs, LossMapArgs, RefineArgs, SynthArgs};

#[derive(Debug, Clone, Serialize)]
pub struct PoseJson {
    pub rotation: [[f64; 3]; 3],
    pub translation: [f64; 3],
    pub axis_angle: [f64; 3],
}

impl From<&PoseSE3> for PoseJson {
    fn from(p: &PoseSE3) -> Self {
        Self {
            rotation: rows(&p.rotation),
            translation: p.translation.into(),
            axis_angle: so3_log(&p.rotation).into(),
        }
    }
}

fn rows(m: &Matrix3<f64>) -> [[f64; 3]; 3] {
    std::array::from_fn(|i| std::array::from_fn(|j| m[(i, j)]))
}

fn intrinsics(common: &Common) -> CliResult<CameraIntrinsics> {
    let path = common
        .intrinsics
        .as_deref()
        .ok_or_else(|| CliError::new(code::INVALID_INPUT, "--intrinsics is required"))?;
    require_file(path, "--intrinsics")?;
    Ok(io::read_intrinsics(path)?)
}

fn input(path: &Path, flag: &str) -> CliResult<PathBuf> {
    require_file(path, flag)?;
    Ok(path.to_path_buf())
}

fn out(common: &Common, name: &str) -> CliResult<PathBuf> {
    let dir = &common.out_dir;
    fs::create_dir_all(dir)
        .map_err(|e| CliError::new(code::IO, format!("{}: {e}", dir.display())))?;
    Ok(dir.join(name))
}

fn read_images(paths: &[PathBuf], flag: &str) -> CliResult<Vec<ImageBuffer>> {
    paths
        .iter()
        .map(|p| Ok(io::read_image(input(p, flag)?)?))
        .collect()
}

/// Chooses a 16-bit depth scale that fits the largest valid depth.
fn depth_scale(d: &DepthMap) -> f64 {
    let max = d
        .values()
        .iter()
        .zip(d.valid())
        .filter(|(_, ok)| **ok)
        .fold(0.0f64, |m, (v, _)| m.max(*v));
    if max <= 0.0 {
        io::DEFAULT_DEPTH_SCALE
    } else {
        (65000.0 / max).min(io::DEFAULT_DEPTH_SCALE)
    }
}

struct Estimate {
    ransac: RansacResult,
    pose: PoseSE3,
    matches: usize,
    /// Mean inverse first-view depth of the triangulated inliers, in units
    /// of the (unit) baseline.
    mean_inverse_depth: Option<f64>,
}

fn estimate_pose(
    matches: &Path,
    k1: &CameraIntrinsics,
    k2: &CameraIntrinsics,
    cfg: &RunConfig,
) -> CliResult<Estimate> {
    let m = io::read_matches(input(matches, "--matches")?)?;
    let r = ransac_essential(&m, k1, k2, &cfg.ransac).context(matches.display())?;
    let inliers: Vec<_> = m
        .iter()
        .zip(&r.inlier_mask)
        .filter(|(_, ok)| **ok)
        .map(|(c, _)| *c)
        .collect();
    let pose = decompose_essential(&r.essential, &inliers, k1, k2).context(matches.display())?;
    let inv: Vec<f64> = inliers
        .iter()
        .filter_map(|c| {
            let (a, b) = c.normalized(k1, k2).ok()?;
            let x = triangulate(&a, &b, &pose).ok()?;
            x.in_front().then(|| 1.0 / x.depth1)
        })
        .collect();
    Ok(Estimate {
        ransac: r,
        pose,
        matches: m.len(),
        mean_inverse_depth: mean_std(&inv).map(|(m, _)| m),
    })
}

// ---------------------------------------------------------------------------

#[derive(Debug, Serialize)]
struct EssentialReport {
    essential: [[f64; 3]; 3],
    pose: PoseJson,
    matches: usize,
    inliers: usize,
    iterations: usize,
    inlier_residual_rms: f64,
    seed: u64,
    inlier_mask: Vec<bool>,
}

pub fn estimate_essential(common: &Common, cfg: &RunConfig, a: &EstimateArgs) -> CliResult<()> {
    let k1 = intrinsics(common)?;
    let k2 = match &a.intrinsics2 {
        Some(p) => io::read_intrinsics(input(p, "--intrinsics2")?)?,
        None => k1,
    };
    let Estimate {
        ransac: r,
        pose,
        matches: n,
        ..
    } = estimate_pose(&a.matches, &k1, &k2, cfg)?;
    let report = EssentialReport {
        essential: rows(&r.essential.e),
        pose: PoseJson::from(&pose),
        matches: n,
        inliers: r.inlier_count(),
        iterations: r.iterations_used,
        inlier_residual_rms: r.inlier_residual_rms,
        seed: cfg.ransac.seed,
        inlier_mask: r.inlier_mask.clone(),
    };
    println!("E =");
    for row in &report.essential {
        println!("  {:>12.8} {:>12.8} {:>12.8}", row[0], row[1], row[2]);
    }
    println!("R =");
    for row in &report.pose.rotation {
        println!("  {:>12.8} {:>12.8} {:>12.8}", row[0], row[1], row[2]);
    }
    let t = report.pose.translation;
    println!("t = [{:.8}, {:.8}, {:.8}]", t[0], t[1], t[2]);
    println!(
        "inliers {}/{} after {} iterations, residual rms {:.3e}",
        report.inliers, n, report.iterations, report.inlier_residual_rms
    );
    Ok(io::write_json(out(common, "essential.json")?, &report)?)
}

// ---------------------------------------------------------------------------

#[derive(Debug, Serialize)]
struct MapSummary {
    file: String,
    min: f64,
    max: f64,
}

#[derive(Debug, Serialize)]
struct LossMapReport {
    total: f64,
    levels: Vec<LevelTerms>,
    valid_pixels: usize,
    epipolar_weighting: bool,
    maps: Vec<MapSummary>,
}

fn read_poses(path: &Path, flag: &str, expected: usize) -> CliResult<Vec<PoseSE3>> {
    let poses = io::read_kitti_poses(input(path, flag)?)?;
    if poses.len() != expected {
        return Err(CliError::new(
            code::INVALID_INPUT,
            format!(
                "{flag} {}: expected {expected} poses (one per source), found {}",
                path.display(),
                poses.len()
            ),
        ));
    }
    Ok(poses)
}

fn essentials_for(
    poses: &[PoseSE3],
    matches: &[PathBuf],
    k: &CameraIntrinsics,
    cfg: &RunConfig,
) -> CliResult<Vec<Option<EssentialMatrix>>> {
    if matches.is_empty() {
        return poses
            .iter()
            .map(|p| Ok(Some(essential_from_pose(p).context("--poses")?)))
            .collect();
    }
    if matches.len() != poses.len() {
        return Err(CliError::new(
            code::INVALID_INPUT,
            format!("--matches: {} files for {} sources", matches.len(), poses.len()),
        ));
    }
    matches
        .iter()
        .map(|m| Ok(Some(estimate_pose(m, k, k, cfg)?.ransac.essential)))
        .collect()
}

pub fn loss_map(common: &Common, cfg: &RunConfig, a: &LossMapArgs) -> CliResult<()> {
    let k = intrinsics(common)?;
    let target = io::read_image(input(&a.target, "--target")?)?;
    let sources = read_images(&a.source, "--source")?;
    let depth = io::read_depth(input(&a.depth, "--depth")?)?;
    let poses = read_poses(&a.poses, "--poses", sources.len())?;
    let essentials = if a.no_epipolar {
        vec![None; sources.len()]
    } else {
        essentials_for(&poses, &a.matches, &k, cfg)?
    };
    let depths = vec![depth; sources.len()];
    let report = total_loss(&target, &sources, &depths, &poses, &essentials, &k, &cfg.loss)?;
    let m = &report.maps;
    let mut maps = Vec::new();
    for (name, values) in [
        ("loss_warp.png", &m.warp),
        ("loss_ssim.png", &m.ssim),
        ("loss_smooth.png", &m.smooth),
        ("epipolar_weight.png", &m.epipolar_weight),
    ] {
        let (min, max) = io::write_false_color(out(common, name)?, m.width, m.height, values, &m.valid)?;
        maps.push(MapSummary {
            file: name.into(),
            min,
            max,
        });
    }
    let summary = LossMapReport {
        total: report.total,
        levels: report.levels.clone(),
        valid_pixels: m.valid.iter().filter(|v| **v).count(),
        epipolar_weighting: !a.no_epipolar,
        maps,
    };
    if let Some(l0) = summary.levels.first() {
        println!(
            "total {:.6e}  (level 0: warp {:.6e}, ssim {:.6e}, smooth {:.6e}, depth {:.6e})",
            summary.total, l0.warp, l0.ssim, l0.smooth, l0.depth
        );
    }
    Ok(io::write_json(out(common, "loss_report.json")?, &summary)?)
}

// ---------------------------------------------------------------------------

pub fn eval_depth(common: &Common, cfg: &RunConfig, a: &EvalDepthArgs) -> CliResult<()> {
    if a.pred.len() != a.gt.len() {
        return Err(CliError::new(
            code::INVALID_INPUT,
            format!("{} --pred files but {} --gt files", a.pred.len(), a.gt.len()),
        ));
    }
    let mut ec = cfg.depth_eval;
    if let Some(cap) = a.cap {
        ec.cap = cap;
    }
    if a.no_median_scaling {
        ec.median_scaling = false;
    }
    ec.validate().context("--cap")?;
    let pairs = a
        .pred
        .iter()
        .zip(&a.gt)
        .map(|(p, g)| {
            Ok((
                io::read_depth(input(p, "--pred")?)?,
                io::read_depth(input(g, "--gt")?)?,
            ))
        })
        .collect::<CliResult<Vec<_>>>()?;
    let summary = eval_depth_batch(&pairs, &ec)?;
    let mut rows: Vec<io::DepthMetricsRow> = a
        .pred
        .iter()
        .zip(&summary.per_frame)
        .map(|(p, m)| io::DepthMetricsRow {
            label: p
                .file_stem()
                .map(|s| s.to_string_lossy().replace([',', '"'], "_"))
                .unwrap_or_default(),
            metrics: *m,
        })
        .collect();
    for (label, m) in [("mean", summary.mean), ("std", summary.std)] {
        rows.push(io::DepthMetricsRow {
            label: label.into(),
            metrics: m,
        });
    }
    println!("{}", DepthEvalResult::COLUMNS.join("  "));
    println!(
        "{}",
        summary
            .mean
            .to_array()
            .iter()
            .map(|v| format!("{v:.4}"))
            .collect::<Vec<_>>()
            .join("  ")
    );
    io::write_depth_metrics_csv(out(common, "depth_metrics.csv")?, &rows)?;
    Ok(io::write_json(out(common, "depth_metrics.json")?, &summary)?)
}

pub fn eval_pose(common: &Common, cfg: &RunConfig, a: &EvalPoseArgs) -> CliResult<()> {
    let pred = io::read_kitti_poses(input(&a.pred, "--pred")?)?;
    let gt = io::read_kitti_poses(input(&a.gt, "--gt")?)?;
    let n = a.snippet.unwrap_or(cfg.snippet());
    let s = eval_trajectory(&pred, &gt, n)?;
    println!(
        "ATE {:.4} ± {:.4}  ATDE {:.4} ± {:.4}  ({} snippets of {n})",
        s.ate_mean, s.ate_std, s.atde_mean, s.atde_std, s.snippets
    );
    io::write_pose_metrics_csv(out(common, "pose_metrics.csv")?, &s)?;
    Ok(io::write_json(out(common, "pose_metrics.json")?, &s)?)
}

// ---------------------------------------------------------------------------

#[derive(Debug, Serialize)]
struct SynthReport {
    seed: u64,
    width: usize,
    height: usize,
    relative_pose: PoseJson,
    moving_pixels: usize,
    matches: usize,
    inliers: usize,
    files: Vec<&'static str>,
}

pub fn synth(common: &Common, cfg: &RunConfig, a: &SynthArgs) -> CliResult<()> {
    let p = &cfg.synth;
    let seed = cfg.seed();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut scene: SceneSpec = match &a.scene {
        Some(path) => io::read_json(input(path, "--scene")?)?,
        None => static_scene(p.width, p.height, p.max_frequency, seed),
    };
    scene.validate().context("scene")?;
    if (p.moving_object || a.moving) && scene.moving_object.is_none() {
        let object = box_object(&mut rng, &scene, p.object_distance, p.object_coverage, p.max_frequency);
        let motion = PoseSE3::from_axis_angle(&Vector3::zeros(), Vector3::from(p.object_motion));
        scene = inject_moving_object(&scene, object, &motion);
    }
    let pose = random_pose(&mut rng, p.rotation_deg.to_radians(), p.baseline);
    let pair = render_pair(&scene, &pose)?;
    let matches = exact_correspondences(
        &scene,
        &PoseSE3::identity(),
        &pose,
        p.matches,
        p.match_noise_px,
        p.outlier_fraction,
        seed,
    )?;

    io::write_json(out(common, "scene.json")?, &scene)?;
    io::write_intrinsics(out(common, "intrinsics.txt")?, &scene.intrinsics)?;
    io::write_image(out(common, "target.png")?, &pair.target.image)?;
    io::write_image(out(common, "source.png")?, &pair.source.image)?;
    for (name, d) in [
        ("target_depth.png", &pair.target.depth),
        ("source_depth.png", &pair.source.depth),
    ] {
        io::write_depth_png(out(common, name)?, d, depth_scale(d))?;
    }
    io::write_kitti_poses(out(common, "relative_pose.txt")?, &[pose])?;
    // Camera-to-world trajectory of the two frames.
    io::write_kitti_poses(
        out(common, "trajectory.txt")?,
        &[PoseSE3::identity(), pose.inverse()],
    )?;
    io::write_matches(out(common, "matches.csv")?, &matches.matches)?;
    io::write_json(out(common, "matches_inliers.json")?, &matches.inlier)?;
    let moving = &pair.target.moving_mask;
    let mask = ImageBuffer::new(
        scene.width,
        scene.height,
        1,
        moving.iter().map(|m| if *m { 1.0 } else { 0.0 }).collect(),
    )?;
    io::write_image(out(common, "moving_mask.png")?, &mask)?;

    let report = SynthReport {
        seed,
        width: scene.width,
        height: scene.height,
        relative_pose: PoseJson::from(&pose),
        moving_pixels: moving.iter().filter(|m| **m).count(),
        matches: matches.matches.len(),
        inliers: matches.inlier.iter().filter(|b| **b).count(),
        files: vec![
            "scene.json",
            "intrinsics.txt",
            "target.png",
            "source.png",
            "target_depth.png",
            "source_depth.png",
            "relative_pose.txt",
            "trajectory.txt",
            "matches.csv",
            "matches_inliers.json",
            "moving_mask.png",
        ],
    };
    println!(
        "rendered {}x{} pair, {} moving pixels, {} matches",
        report.width, report.height, report.moving_pixels, report.matches
    );
    Ok(io::write_json(out(common, "synth.json")?, &report)?)
}

// ---------------------------------------------------------------------------

#[derive(Debug, Serialize)]
struct TraceJson {
    iterations: usize,
    stop: Option<StopReason>,
    totals: Vec<f64>,
    gradient_norms: Vec<f64>,
    pose_errors: Vec<Vec<PoseError>>,
    initial_poses: Vec<PoseJson>,
    final_poses: Vec<PoseJson>,
    epipolar_weighting: bool,
    seed: u64,
    depth_file: &'static str,
    error: Option<String>,
}

impl TraceJson {
    fn new(t: &RefineTrace, init: &[PoseSE3], cfg: &RunConfig) -> Self {
        Self {
            iterations: t.iterations,
            stop: t.stop,
            totals: t.totals.clone(),
            gradient_norms: t.gradient_norms.clone(),
            pose_errors: t.pose_errors.clone(),
            initial_poses: init.iter().map(PoseJson::from).collect(),
            final_poses: t.poses.iter().map(PoseJson::from).collect(),
            epipolar_weighting: cfg.refine.epipolar_weighting,
            seed: cfg.seed(),
            depth_file: "depth.png",
            error: None,
        }
    }
}

fn initial_inverse_depth(path: Option<&Path>, w: usize, h: usize) -> CliResult<InverseDepthMap> {
    let Some(path) = path else {
        return Ok(InverseDepthMap::constant(w, h, 1.0)?);
    };
    let d = io::read_depth(input(path, "--init-depth")?)?;
    if (d.width(), d.height()) != (w, h) {
        return Err(CliError::new(
            code::INVALID_INPUT,
            format!(
                "--init-depth {}: {}x{} does not match the {w}x{h} target",
                path.display(),
                d.width(),
                d.height()
            ),
        ));
    }
    Ok(d.to_inverse())
}

fn mean_inverse(inv: &InverseDepthMap) -> f64 {
    let v: Vec<f64> = inv
        .values()
        .iter()
        .zip(inv.valid())
        .filter(|(_, ok)| **ok)
        .map(|(v, _)| *v)
        .collect();
    mean_std(&v).map_or(1.0, |(m, _)| m)
}

pub fn refine(common: &Common, cfg: &RunConfig, a: &RefineArgs) -> CliResult<()> {
    let k = intrinsics(common)?;
    let target = io::read_image(input(&a.target, "--target")?)?;
    let sources = read_images(&a.source, "--source")?;
    let ns = sources.len();
    let inv = initial_inverse_depth(a.init_depth.as_deref(), target.width(), target.height())?;
    let (init_poses, essentials) = match (&a.pose, a.matches.is_empty()) {
        (Some(p), true) => {
            let given = read_poses(p, "--pose", ns)?;
            let es = essentials_for(&given, &[], &k, cfg)?;
            let pert = cfg.perturbation;
            let init = given
                .iter()
                .enumerate()
                .map(|(i, g)| {
                    perturb_pose(
                        g,
                        pert.rotation_deg.to_radians(),
                        pert.translation_frac,
                        cfg.seed().wrapping_add(i as u64),
                    )
                })
                .collect();
            (init, es)
        }
        (None, false) => {
            if a.matches.len() != ns {
                return Err(CliError::new(
                    code::INVALID_INPUT,
                    format!("--matches: {} files for {ns} sources", a.matches.len()),
                ));
            }
            let mut init = Vec::with_capacity(ns);
            let mut es = Vec::with_capacity(ns);
            for m in &a.matches {
                let est = estimate_pose(m, &k, &k, cfg)?;
                // Bring the unit baseline to the scale of the initial depth.
                let scale = est.mean_inverse_depth.unwrap_or(1.0) / mean_inverse(&inv);
                let mut pose = est.pose;
                pose.translation *= scale;
                init.push(pose);
                es.push(Some(est.ransac.essential));
            }
            (init, es)
        }
        _ => {
            return Err(CliError::new(
                code::INVALID_INPUT,
                "refine needs exactly one of --pose or --matches",
            ))
        }
    };
    let truth = match &a.truth {
        Some(p) => Some(read_poses(p, "--truth", ns)?),
        None => None,
    };
    let result = refine_with_truth(
        &target,
        &sources,
        &inv,
        &init_poses,
        &essentials,
        &k,
        &cfg.refine,
        truth.as_deref(),
    );
    let trace_path = out(common, "refine_trace.json")?;
    let trace = match result {
        Ok(t) => t,
        Err(Error::NumericalFailure { iteration, trace }) => {
            let mut json = TraceJson::new(&trace, &init_poses, cfg);
            json.error = Some(format!("numerical failure at iteration {iteration}"));
            io::write_json(&trace_path, &json)?;
            return Err(CliError::new(
                code::NUMERICAL,
                format!(
                    "numerical failure at iteration {iteration}; partial trace in {}",
                    trace_path.display()
                ),
            ));
        }
        Err(e) => return Err(e.into()),
    };
    let depth = trace.inv_depth.to_depth();
    io::write_depth_png(out(common, "depth.png")?, &depth, depth_scale(&depth))?;
    let json = TraceJson::new(&trace, &init_poses, cfg);
    if let (Some(first), Some(last)) = (trace.totals.first(), trace.totals.last()) {
        println!(
            "{} iterations ({:?}): loss {first:.6e} -> {last:.6e}",
            trace.iterations, trace.stop
        );
    }
    Ok(io::write_json(trace_path, &json)?)
}
