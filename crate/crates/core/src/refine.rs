//! Direct gradient descent on the total objective over one inverse-depth
//! map and a pose per source.

use std::collections::VecDeque;

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{so3_log, CameraIntrinsics, EssentialMatrix, PoseSE3};
use crate::losses::{evaluate, LossGradient, LossInputs, LossReport, LossState, LossWeights};
use crate::metrics::{ate_snippet, TrajectorySnippet};
use crate::raster::{ImageBuffer, InverseDepthMap};

/// Inverse depth never drops below this.
pub const INVERSE_DEPTH_FLOOR: f64 = 1e-6;

const MAX_HALVINGS: usize = 40;
// Sufficient-decrease constant of the backtracking line search.
const ARMIJO: f64 = 1e-4;
// Consecutive insufficient decreases before giving up.
const STALL_LIMIT: usize = 4;
// The line search may grow the configured steps by at most this factor.
const MAX_STEP_SCALE: f64 = 1024.0;

/// Search direction of each iteration; both use the same backtracking.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum Optimizer {
    /// Negative gradient scaled by the configured steps.
    GradientDescent,
    /// Limited-memory quasi-Newton direction seeded with the same scaling.
    Lbfgs { memory: usize },
}

impl Default for Optimizer {
    fn default() -> Self {
        Optimizer::Lbfgs { memory: 8 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RefineConfig {
    /// Step for inverse depth. The raw gradient is multiplied by the pixel
    /// count first, since every image term is a per-pixel mean.
    pub depth_step: f64,
    pub rotation_step: f64,
    pub translation_step: f64,
    pub max_iterations: usize,
    /// Stop once several consecutive accepted steps each lower the loss by
    /// less than this.
    pub tolerance: f64,
    /// Stop once the gradient norm falls below this.
    pub gradient_tolerance: f64,
    pub epipolar_weighting: bool,
    pub optimize_depth: bool,
    pub optimizer: Optimizer,
    pub weights: LossWeights,
    /// Seed of the initial pose perturbation used by the demo commands.
    pub seed: u64,
}

impl Default for RefineConfig {
    fn default() -> Self {
        Self {
            depth_step: 0.05,
            rotation_step: 1e-2,
            translation_step: 1e-2,
            max_iterations: 200,
            tolerance: 1e-10,
            gradient_tolerance: 1e-9,
            epipolar_weighting: true,
            optimize_depth: true,
            optimizer: Optimizer::default(),
            weights: LossWeights::default(),
            seed: 0,
        }
    }
}

impl RefineConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("depth_step", self.depth_step),
            ("rotation_step", self.rotation_step),
            ("translation_step", self.translation_step),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::InvalidInput(format!(
                    "{name} must be positive, got {v}"
                )));
            }
        }
        if self.max_iterations == 0 {
            return Err(Error::InvalidInput(
                "max_iterations must be at least 1".into(),
            ));
        }
        if !(self.tolerance >= 0.0 && self.gradient_tolerance >= 0.0) {
            return Err(Error::InvalidInput(
                "tolerances must be non-negative".into(),
            ));
        }
        if let Optimizer::Lbfgs { memory: 0 } = self.optimizer {
            return Err(Error::InvalidInput(
                "L-BFGS memory must be at least 1".into(),
            ));
        }
        self.weights.validate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PoseError {
    /// Geodesic rotation error, radians.
    pub rotation: f64,
    /// Angle between translation directions, radians.
    pub translation_direction: f64,
    /// Two-frame ATE after scale alignment, in ground-truth units.
    pub ate: f64,
}

impl PoseError {
    pub fn between(pred: &PoseSE3, truth: &PoseSE3) -> Result<Self> {
        let snippet = |p: &PoseSE3| {
            TrajectorySnippet::new(vec![0, 1], vec![PoseSE3::identity(), p.inverse()])
        };
        Ok(Self {
            rotation: pred.rotation_angle_to(truth),
            translation_direction: pred
                .translation_angle_to(truth)
                .ok_or_else(|| Error::DegenerateMotion("zero-length translation".into()))?,
            ate: ate_snippet(&snippet(pred)?, &snippet(truth)?)?,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StopReason {
    GradientTolerance,
    LossTolerance,
    LineSearchExhausted,
    IterationCap,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RefineTrace {
    /// Loss of the initial state, then of every accepted iterate.
    pub totals: Vec<f64>,
    pub gradient_norms: Vec<f64>,
    /// Pose errors per recorded total, per source, when truth was given.
    pub pose_errors: Vec<Vec<PoseError>>,
    pub poses: Vec<PoseSE3>,
    pub inv_depth: InverseDepthMap,
    pub iterations: usize,
    pub stop: Option<StopReason>,
}

/// Gradient of the objective at `state`.
pub fn loss_gradients(state: &LossState, inputs: &LossInputs) -> Result<LossGradient> {
    let (_, g) = evaluate(inputs, state, true)?;
    g.ok_or_else(|| Error::DegenerateState("gradient was not produced".into()))
}

/// Rescales `inv_depth` to unit mean over valid pixels and scales the
/// translations by the same factor, so every warp is unchanged.
fn renormalize(values: &mut [f64], valid: &[bool], poses: &mut [PoseSE3]) -> Result<()> {
    let (sum, n) = values
        .iter()
        .zip(valid)
        .filter(|(_, ok)| **ok)
        .fold((0.0, 0usize), |(s, n), (v, _)| (s + v, n + 1));
    if n == 0 || !(sum > 0.0) {
        return Err(Error::DegenerateState(
            "inverse depth has no positive valid pixels".into(),
        ));
    }
    let mean = sum / n as f64;
    for (v, ok) in values.iter_mut().zip(valid) {
        *v = if *ok { *v / mean } else { 0.0 };
    }
    for p in poses {
        p.translation *= mean;
    }
    Ok(())
}

struct Iterate {
    inv: Vec<f64>,
    poses: Vec<PoseSE3>,
    report: LossReport,
    grad: LossGradient,
}

fn state_of(
    inv: &[f64],
    valid: &[bool],
    poses: &[PoseSE3],
    w: usize,
    h: usize,
) -> Result<LossState> {
    let map = InverseDepthMap::new(w, h, inv.to_vec(), valid.to_vec())?;
    Ok(LossState {
        inv_depths: vec![map; poses.len()],
        poses: poses.to_vec(),
    })
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Variables are laid out as the shared inverse depth followed by a
/// left-perturbation 6-vector per pose.
fn flat_gradient(g: &LossGradient, valid: &[bool]) -> Vec<f64> {
    let mut out = vec![0.0; valid.len()];
    for gs in &g.inv_depths {
        for ((o, v), ok) in out.iter_mut().zip(gs).zip(valid) {
            if *ok {
                *o += v;
            }
        }
    }
    out.extend(g.poses.iter().flatten());
    out
}

/// Diagonal of the plain gradient step, which also seeds the quasi-Newton
/// metric.
fn step_scales(cfg: &RefineConfig, valid: &[bool], n_valid: f64, n_poses: usize) -> Vec<f64> {
    let mut out: Vec<f64> = valid
        .iter()
        .map(|ok| {
            if *ok && cfg.optimize_depth {
                cfg.depth_step * n_valid
            } else {
                0.0
            }
        })
        .collect();
    for _ in 0..n_poses {
        out.extend([cfg.rotation_step; 3]);
        out.extend([cfg.translation_step; 3]);
    }
    out
}

fn step(cur: &Iterate, dir: &[f64], a: f64, valid: &[bool]) -> (Vec<f64>, Vec<PoseSE3>) {
    let n = cur.inv.len();
    let inv = cur
        .inv
        .iter()
        .zip(&dir[..n])
        .zip(valid)
        .map(|((v, d), ok)| {
            if *ok {
                (v + a * d).max(INVERSE_DEPTH_FLOOR)
            } else {
                *v
            }
        })
        .collect();
    let poses = cur
        .poses
        .iter()
        .zip(dir[n..].chunks_exact(6))
        .map(|(p, d)| p.perturb_left(&[a * d[0], a * d[1], a * d[2], a * d[3], a * d[4], a * d[5]]))
        .collect();
    (inv, poses)
}

/// Flat displacement from `a` to `b`, with pose parts expressed as the
/// left perturbation taking one pose to the other.
fn displacement(a: &Iterate, b: &Iterate) -> Vec<f64> {
    let mut out: Vec<f64> = b.inv.iter().zip(&a.inv).map(|(x, y)| x - y).collect();
    for (pa, pb) in a.poses.iter().zip(&b.poses) {
        let dr = pb.rotation * pa.rotation.transpose();
        let w = so3_log(&dr);
        let v = pb.translation - dr * pa.translation;
        out.extend([w.x, w.y, w.z, v.x, v.y, v.z]);
    }
    out
}

/// Two-loop recursion with the plain step diagonal as initial metric.
fn lbfgs_direction(
    g: &[f64],
    scale: &[f64],
    memory: &VecDeque<(Vec<f64>, Vec<f64>, f64)>,
) -> Vec<f64> {
    let mut q = g.to_vec();
    let mut alphas = Vec::with_capacity(memory.len());
    for (s, y, rho) in memory.iter().rev() {
        let a = rho * dot(s, &q);
        for (qi, yi) in q.iter_mut().zip(y) {
            *qi -= a * yi;
        }
        alphas.push(a);
    }
    let gamma = memory
        .back()
        .map(|(s, y, _)| {
            let yhy: f64 = y.iter().zip(scale).map(|(y, c)| y * y * c).sum();
            if yhy > 0.0 {
                dot(s, y) / yhy
            } else {
                1.0
            }
        })
        .unwrap_or(1.0);
    let mut r: Vec<f64> = q.iter().zip(scale).map(|(q, c)| gamma * c * q).collect();
    for ((s, y, rho), a) in memory.iter().zip(alphas.iter().rev()) {
        let b = rho * dot(y, &r);
        for (ri, si) in r.iter_mut().zip(s) {
            *ri += si * (a - b);
        }
    }
    r.iter_mut().for_each(|v| *v = -*v);
    r
}

/// Refines without ground truth.
pub fn refine(
    target: &ImageBuffer,
    sources: &[ImageBuffer],
    init_inv_depth: &InverseDepthMap,
    init_poses: &[PoseSE3],
    essentials: &[Option<EssentialMatrix>],
    k: &CameraIntrinsics,
    cfg: &RefineConfig,
) -> Result<RefineTrace> {
    refine_with_truth(
        target,
        sources,
        init_inv_depth,
        init_poses,
        essentials,
        k,
        cfg,
        None,
    )
}

/// Gradient descent with a halving line search. Each iterate is
/// renormalized to unit-mean inverse depth before its loss is compared, so
/// the recorded totals never increase.
#[allow(clippy::too_many_arguments)]
pub fn refine_with_truth(
    target: &ImageBuffer,
    sources: &[ImageBuffer],
    init_inv_depth: &InverseDepthMap,
    init_poses: &[PoseSE3],
    essentials: &[Option<EssentialMatrix>],
    k: &CameraIntrinsics,
    cfg: &RefineConfig,
    truth: Option<&[PoseSE3]>,
) -> Result<RefineTrace> {
    cfg.validate()?;
    let (w, h) = (init_inv_depth.width(), init_inv_depth.height());
    if init_poses.len() != sources.len() || essentials.len() != sources.len() {
        return Err(Error::Shape(format!(
            "{} sources, {} poses, {} essential matrices",
            sources.len(),
            init_poses.len(),
            essentials.len()
        )));
    }
    if let Some(t) = truth {
        if t.len() != sources.len() {
            return Err(Error::Shape(
                "one ground-truth pose per source is required".into(),
            ));
        }
    }
    if init_inv_depth
        .values()
        .iter()
        .zip(init_inv_depth.valid())
        .any(|(v, ok)| *ok && !(*v > 0.0 && v.is_finite()))
    {
        return Err(Error::InvalidInput(
            "initial inverse depth must be positive".into(),
        ));
    }
    let es: Vec<Option<EssentialMatrix>> = if cfg.epipolar_weighting {
        essentials.to_vec()
    } else {
        vec![None; sources.len()]
    };
    let inputs = LossInputs {
        target,
        sources,
        essentials: &es,
        k: *k,
        weights: cfg.weights,
    };
    let valid = init_inv_depth.valid().to_vec();
    let n_valid = valid.iter().filter(|b| **b).count() as f64;

    let pose_errors = |poses: &[PoseSE3]| -> Result<Vec<PoseError>> {
        match truth {
            Some(t) => poses
                .iter()
                .zip(t)
                .map(|(p, g)| PoseError::between(p, g))
                .collect(),
            None => Ok(Vec::new()),
        }
    };
    let eval = |inv: Vec<f64>, poses: Vec<PoseSE3>| -> Result<Iterate> {
        let (report, grad) = evaluate(&inputs, &state_of(&inv, &valid, &poses, w, h)?, true)?;
        let grad =
            grad.ok_or_else(|| Error::DegenerateState("gradient was not produced".into()))?;
        Ok(Iterate {
            inv,
            poses,
            report,
            grad,
        })
    };

    let mut inv = init_inv_depth.values().to_vec();
    let mut poses = init_poses.to_vec();
    renormalize(&mut inv, &valid, &mut poses)?;
    let mut cur = eval(inv, poses)?;
    let mut trace = RefineTrace {
        totals: vec![cur.report.total],
        gradient_norms: vec![],
        pose_errors: vec![pose_errors(&cur.poses)?],
        poses: cur.poses.clone(),
        inv_depth: InverseDepthMap::new(w, h, cur.inv.clone(), valid.clone())?,
        iterations: 0,
        stop: None,
    };
    let fail = |trace: &RefineTrace, iteration: usize| Error::NumericalFailure {
        iteration,
        trace: Box::new(trace.clone()),
    };
    if !cur.report.total.is_finite() {
        return Err(fail(&trace, 0));
    }

    let scale = step_scales(cfg, &valid, n_valid, init_poses.len());
    let mut memory: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::new();
    let mut alpha: f64 = 1.0;
    let mut stalls = 0;
    for it in 1..=cfg.max_iterations {
        trace.iterations = it;
        let g = flat_gradient(&cur.grad, &valid);
        let gnorm = cur.grad.norm();
        trace.gradient_norms.push(gnorm);
        if !gnorm.is_finite() {
            return Err(fail(&trace, it));
        }
        if gnorm < cfg.gradient_tolerance {
            trace.stop = Some(StopReason::GradientTolerance);
            break;
        }

        let (mut dir, mut a) = match cfg.optimizer {
            Optimizer::GradientDescent => (
                g.iter()
                    .zip(&scale)
                    .map(|(g, s)| -g * s)
                    .collect::<Vec<_>>(),
                (alpha * 2.0).min(MAX_STEP_SCALE),
            ),
            Optimizer::Lbfgs { .. } => (lbfgs_direction(&g, &scale, &memory), 1.0),
        };
        let mut slope = dot(&g, &dir);
        if !(slope < 0.0) {
            // Not a descent direction: restart from the scaled gradient.
            memory.clear();
            dir = g.iter().zip(&scale).map(|(g, s)| -g * s).collect();
            slope = dot(&g, &dir);
            a = 1.0;
        }

        let mut accepted = None;
        for _ in 0..MAX_HALVINGS {
            let (mut inv, mut poses) = step(&cur, &dir, a, &valid);
            renormalize(&mut inv, &valid, &mut poses)?;
            let cand = match eval(inv, poses) {
                Ok(c) => c,
                // A step that leaves no pixel overlapping is just too long.
                Err(Error::DegenerateState(_)) => {
                    a *= 0.5;
                    continue;
                }
                Err(e) => return Err(e),
            };
            if !cand.report.total.is_finite() {
                return Err(fail(&trace, it));
            }
            if cand.report.total <= cur.report.total + ARMIJO * a * slope {
                accepted = Some(cand);
                break;
            }
            a *= 0.5;
        }
        let Some(next) = accepted else {
            trace.stop = Some(StopReason::LineSearchExhausted);
            break;
        };
        alpha = a;
        if let Optimizer::Lbfgs { memory: m } = cfg.optimizer {
            let sv = displacement(&cur, &next);
            let yv: Vec<f64> = flat_gradient(&next.grad, &valid)
                .iter()
                .zip(&g)
                .map(|(a, b)| a - b)
                .collect();
            let sy = dot(&sv, &yv);
            if sy > 1e-300 {
                memory.push_back((sv, yv, 1.0 / sy));
                while memory.len() > m.max(1) {
                    memory.pop_front();
                }
            }
        }
        let decrease = cur.report.total - next.report.total;
        cur = next;
        trace.totals.push(cur.report.total);
        trace.pose_errors.push(pose_errors(&cur.poses)?);
        trace.poses = cur.poses.clone();
        trace.inv_depth = InverseDepthMap::new(w, h, cur.inv.clone(), valid.clone())?;
        if decrease < cfg.tolerance {
            // Kinks of the absolute-value terms produce isolated tiny
            // steps; restart the metric and only stop on repeated stalls.
            stalls += 1;
            memory.clear();
            if stalls >= STALL_LIMIT {
                trace.stop = Some(StopReason::LossTolerance);
                break;
            }
        } else {
            stalls = 0;
        }
    }
    if trace.stop.is_none() {
        trace.stop = Some(StopReason::IterationCap);
    }
    Ok(trace)
}

/// Rotates `pose` by exactly `angle` radians about a random axis (on the
/// left) and adds a random translation offset of `translation_frac` times
/// its translation length.
pub fn perturb_pose(pose: &PoseSE3, angle: f64, translation_frac: f64, seed: u64) -> PoseSE3 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut unit = || -> Vector3<f64> {
        loop {
            let v = Vector3::new(
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
            );
            let n = v.norm();
            if n > 1e-3 && n <= 1.0 {
                return v / n;
            }
        }
    };
    let axis = unit();
    let dir = unit();
    let len = pose.translation.norm();
    let dr = PoseSE3::from_axis_angle(&(axis * angle), Vector3::zeros());
    let mut p = dr.compose(pose);
    p.translation = pose.translation + dir * translation_frac * len;
    p
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::essential_from_pose;
    use crate::synthetic::{render_pair, static_scene};

    fn setup() -> (
        ImageBuffer,
        Vec<ImageBuffer>,
        InverseDepthMap,
        PoseSE3,
        CameraIntrinsics,
    ) {
        let scene = static_scene(48, 36, 0.4, 7);
        let pose =
            PoseSE3::from_axis_angle(&Vector3::new(0.0, 0.01, 0.0), Vector3::new(0.4, 0.0, 0.1));
        let pair = render_pair(&scene, &pose).unwrap();
        (
            pair.target.image,
            vec![pair.source.image],
            pair.target.depth.to_inverse(),
            pose,
            scene.intrinsics,
        )
    }

    fn small_cfg() -> RefineConfig {
        RefineConfig {
            max_iterations: 15,
            weights: LossWeights {
                levels: 2,
                ..Default::default()
            },
            ..Default::default()
        }
    }

    #[test]
    fn totals_never_increase_and_mean_is_one() {
        let (t, s, inv, pose, k) = setup();
        let e = vec![Some(essential_from_pose(&pose).unwrap())];
        let init = perturb_pose(&pose, 1f64.to_radians(), 0.05, 3);
        let tr =
            refine_with_truth(&t, &s, &inv, &[init], &e, &k, &small_cfg(), Some(&[pose])).unwrap();
        assert!(tr.totals.windows(2).all(|w| w[1] <= w[0]));
        assert!(tr.totals.last() < tr.totals.first());
        let (sum, n) = tr
            .inv_depth
            .values()
            .iter()
            .zip(tr.inv_depth.valid())
            .filter(|(_, ok)| **ok)
            .fold((0.0, 0), |(s, n), (v, _)| (s + v, n + 1));
        assert!((sum / n as f64 - 1.0).abs() < 1e-9);
        assert_eq!(tr.pose_errors.len(), tr.totals.len());
    }

    #[test]
    fn starting_at_truth_stops_quickly() {
        let (t, s, inv, pose, k) = setup();
        let e = vec![Some(essential_from_pose(&pose).unwrap())];
        let cfg = RefineConfig {
            tolerance: 1e-6,
            ..small_cfg()
        };
        let tr = refine(&t, &s, &inv, &[pose], &e, &k, &cfg).unwrap();
        assert!(
            tr.iterations <= 2,
            "{} iterations, totals {:?}",
            tr.iterations,
            tr.totals
        );
    }

    #[test]
    fn invalid_config_is_rejected() {
        let (t, s, inv, pose, k) = setup();
        let cfg = RefineConfig {
            depth_step: 0.0,
            ..small_cfg()
        };
        assert!(matches!(
            refine(&t, &s, &inv, &[pose], &[None], &k, &cfg),
            Err(Error::InvalidInput(_))
        ));
        let mut bad = inv.values().to_vec();
        bad[0] = -1.0;
        // Non-positive inverse depth cannot even be constructed.
        assert!(InverseDepthMap::dense(inv.width(), inv.height(), bad).is_err());
    }

    #[test]
    fn perturbation_has_the_requested_angle() {
        let p = PoseSE3::from_axis_angle(&Vector3::new(0.1, 0.0, 0.0), Vector3::new(1.0, 0.0, 0.0));
        let q = perturb_pose(&p, 0.01, 0.02, 5);
        assert!((p.rotation_angle_to(&q) - 0.01).abs() < 1e-12);
        assert!(((q.translation - p.translation).norm() - 0.02).abs() < 1e-12);
    }
}
