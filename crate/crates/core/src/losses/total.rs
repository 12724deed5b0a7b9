//! Multi-scale total objective with analytic gradients.
//!
//! Every level keeps the images at full resolution: the level's inverse
//! depth is obtained by `level` box halvings of the full-resolution
//! variable and upsampled back before warping. Smoothness is evaluated at
//! the level's own resolution against a box-downsampled target.

use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use super::consistency::{pairwise_abs, ConsistencyDomain};
use super::photometric::{epipolar_weight_at, DEFAULT_MAX_LOG_WEIGHT};
use super::smoothness::{smoothness_signs, smoothness_terms, SmoothnessOrder};
use super::ssim::{ssim_adjoint, ssim_stats};
use crate::error::{Error, Result};
use crate::geometry::{CameraIntrinsics, EssentialMatrix, PoseSE3, MAX_LEVEL};
use crate::par;
use crate::raster::{bilinear_taps, DepthMap, ImageBuffer, InverseDepthMap};
use crate::warp::{jacobian_from_ray, pixel_rays, LevelSampler};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossWeights {
    pub lambda_smooth: f64,
    pub lambda_ssim: f64,
    pub lambda_depth: f64,
    pub levels: usize,
    /// Cap on `|residual|` inside the epipolar weight `exp(|residual|)`.
    pub max_log_weight: f64,
    pub smoothness: SmoothnessOrder,
    pub consistency: ConsistencyDomain,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda_smooth: 0.2,
            lambda_ssim: 0.7,
            lambda_depth: 0.5,
            levels: crate::warp::DEFAULT_LEVELS,
            max_log_weight: DEFAULT_MAX_LOG_WEIGHT,
            smoothness: SmoothnessOrder::Second,
            consistency: ConsistencyDomain::Depth,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("lambda_smooth", self.lambda_smooth),
            ("lambda_ssim", self.lambda_ssim),
            ("lambda_depth", self.lambda_depth),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::InvalidInput(format!(
                    "{name} must be non-negative, got {v}"
                )));
            }
        }
        if self.levels == 0 || self.levels > MAX_LEVEL as usize {
            return Err(Error::InvalidInput(format!(
                "levels must lie in [1, {MAX_LEVEL}], got {}",
                self.levels
            )));
        }
        if !(self.max_log_weight.is_finite() && self.max_log_weight > 0.0) {
            return Err(Error::InvalidInput(
                "max_log_weight must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Fixed inputs of the objective.
#[derive(Debug, Clone, Copy)]
pub struct LossInputs<'a> {
    pub target: &'a ImageBuffer,
    pub sources: &'a [ImageBuffer],
    /// One per source; `None` disables epipolar weighting for that source.
    pub essentials: &'a [Option<EssentialMatrix>],
    pub k: CameraIntrinsics,
    pub weights: LossWeights,
}

/// Variables of the objective: a full-resolution target inverse depth and
/// a target-to-source pose for every source.
#[derive(Debug, Clone, PartialEq)]
pub struct LossState {
    pub inv_depths: Vec<InverseDepthMap>,
    pub poses: Vec<PoseSE3>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LevelTerms {
    pub level: usize,
    pub warp: f64,
    pub smooth: f64,
    pub ssim: f64,
    pub depth: f64,
}

impl LevelTerms {
    pub fn combined(&self, w: &LossWeights) -> f64 {
        self.warp
            + w.lambda_smooth * self.smooth
            + w.lambda_ssim * self.ssim
            + w.lambda_depth * self.depth
    }
}

/// Full-resolution per-pixel diagnostics of the finest level.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct PixelMaps {
    pub width: usize,
    pub height: usize,
    /// Weighted absolute photometric error summed over sources.
    pub warp: Vec<f64>,
    /// `(1 - SSIM) / 2` summed over sources.
    pub ssim: Vec<f64>,
    /// Smoothness contribution averaged over sources.
    pub smooth: Vec<f64>,
    /// Epipolar weight averaged over the sources where the pixel is valid;
    /// 1 where no source sees it.
    pub epipolar_weight: Vec<f64>,
    /// Valid in at least one source.
    pub valid: Vec<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub levels: Vec<LevelTerms>,
    pub total: f64,
    pub maps: PixelMaps,
}

impl LossReport {
    /// Weighted sum of the stored per-level terms.
    pub fn recomputed_total(&self, w: &LossWeights) -> f64 {
        self.levels.iter().map(|l| l.combined(w)).sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossGradient {
    /// d total / d inverse depth, one full-resolution map per source.
    pub inv_depths: Vec<Vec<f64>>,
    /// d total / d (left perturbation `(w, v)`) of each pose.
    pub poses: Vec<[f64; 6]>,
}

impl LossGradient {
    pub fn norm(&self) -> f64 {
        let d: f64 = self.inv_depths.iter().flatten().map(|g| g * g).sum();
        let p: f64 = self.poses.iter().flatten().map(|g| g * g).sum();
        (d + p).sqrt()
    }
}

/// Everything needed at one pixel for one source at one level.
#[derive(Debug, Clone, Copy, Default)]
struct PixelWarp {
    valid: bool,
    cell: usize,
    depth: f64,
    d_depth: [f64; 2],
    d_pose: [[f64; 6]; 2],
    sample: [f64; 3],
    grad: [[f64; 2]; 3],
    residual: f64,
    weight: f64,
    d_weight: [f64; 2],
}

fn check_inputs(inputs: &LossInputs, state: &LossState) -> Result<()> {
    inputs.weights.validate()?;
    inputs.k.validate()?;
    let s = inputs.sources.len();
    if s == 0 {
        return Err(Error::InsufficientData { needed: 1, got: 0 });
    }
    if inputs.essentials.len() != s || state.poses.len() != s || state.inv_depths.len() != s {
        return Err(Error::Shape(format!(
            "{s} sources but {} essentials, {} poses, {} inverse depths",
            inputs.essentials.len(),
            state.poses.len(),
            state.inv_depths.len()
        )));
    }
    let t = inputs.target;
    for src in inputs.sources {
        if !src.same_shape(t) {
            return Err(Error::Shape(
                "source and target images differ in shape".into(),
            ));
        }
    }
    for d in &state.inv_depths {
        if d.width() != t.width() || d.height() != t.height() {
            return Err(Error::Shape(format!(
                "inverse depth is {}x{}, images {}x{}",
                d.width(),
                d.height(),
                t.width(),
                t.height()
            )));
        }
    }
    Ok(())
}

struct Prepared {
    width: usize,
    height: usize,
    rays: Vec<Vector3<f64>>,
    kinv: Matrix3<f64>,
    samplers: Vec<LevelSampler>,
    grays: Vec<(Vec<f64>, usize, usize)>,
    essentials: Vec<Option<EssentialMatrix>>,
}

fn prepare(inputs: &LossInputs) -> Result<Prepared> {
    let t = inputs.target;
    let (w, h) = (t.width(), t.height());
    let levels = inputs.weights.levels;
    let samplers = (0..levels)
        .map(|l| LevelSampler::new(w, h, l))
        .collect::<Result<Vec<_>>>()?;
    let mut grays = Vec::with_capacity(levels);
    let mut img = t.to_gray();
    for l in 0..levels {
        if l > 0 {
            img = img.downsample2()?;
        }
        grays.push((img.data().to_vec(), img.width(), img.height()));
    }
    let essentials = inputs
        .essentials
        .iter()
        .map(|e| e.map(|e| e.normalized()).transpose())
        .collect::<Result<Vec<_>>>()?;
    Ok(Prepared {
        width: w,
        height: h,
        rays: pixel_rays(&inputs.k, w, h),
        kinv: inputs.k.inverse_matrix(),
        samplers,
        grays,
        essentials,
    })
}

fn warp_pixels(
    inputs: &LossInputs,
    prep: &Prepared,
    source: usize,
    pose: &PoseSE3,
    inv: &[f64],
    inv_valid: &[bool],
) -> Vec<PixelWarp> {
    let src = &inputs.sources[source];
    let essential = prep.essentials[source];
    let ch = src.channels();
    let max_log = inputs.weights.max_log_weight;
    par::map_range(prep.rays.len(), |i| {
        let mut px = PixelWarp {
            weight: 1.0,
            ..Default::default()
        };
        if !inv_valid[i] || !(inv[i] > 0.0) {
            return px;
        }
        let depth = 1.0 / inv[i];
        let Some(jac) = jacobian_from_ray(&inputs.k, pose, depth, &prep.rays[i]) else {
            return px;
        };
        let [x, y] = jac.coord;
        let Some(taps) = bilinear_taps(src.width(), src.height(), x, y) else {
            return px;
        };
        px.valid = true;
        px.cell = taps.index[0];
        px.depth = depth;
        px.d_depth = jac.d_depth;
        px.d_pose = jac.d_pose;
        for c in 0..ch {
            px.sample[c] = taps.sample(src, c);
            px.grad[c] = taps.gradient(src, c);
        }
        if let Some(e) = &essential {
            let (r, w, dw) = epipolar_weight_at(e, &prep.kinv, &prep.rays[i], jac.coord, max_log);
            px.residual = r;
            px.weight = w;
            px.d_weight = dw;
        }
        px
    })
}

struct SourceLevel {
    warp: f64,
    ssim: f64,
    warp_map: Vec<f64>,
    ssim_map: Vec<f64>,
    pixels: Vec<PixelWarp>,
    grad_inv: Option<Vec<f64>>,
    grad_pose: [f64; 6],
}

fn channel_of(img: &ImageBuffer, c: usize) -> Vec<f64> {
    (0..img.len()).map(|i| img.pixel(i)[c]).collect()
}

fn source_level(
    inputs: &LossInputs,
    prep: &Prepared,
    source: usize,
    pose: &PoseSE3,
    inv: &[f64],
    inv_valid: &[bool],
    want_gradient: bool,
) -> Result<SourceLevel> {
    let target = inputs.target;
    let ch = target.channels();
    let (w, h) = (prep.width, prep.height);
    let pixels = warp_pixels(inputs, prep, source, pose, inv, inv_valid);
    let n = pixels.iter().filter(|p| p.valid).count();
    if n == 0 {
        return Err(Error::DegenerateState(format!(
            "no pixel warps into source {source}"
        )));
    }
    let inv_n = 1.0 / n as f64;
    let inv_c = 1.0 / ch as f64;

    let abs_err: Vec<f64> = pixels
        .iter()
        .enumerate()
        .map(|(i, p)| {
            if !p.valid {
                return 0.0;
            }
            let t = target.pixel(i);
            (0..ch).map(|c| (p.sample[c] - t[c]).abs()).sum::<f64>() * inv_c
        })
        .collect();
    let warp_map: Vec<f64> = abs_err
        .iter()
        .zip(&pixels)
        .map(|(a, p)| a * p.weight)
        .collect();
    let warp = warp_map.iter().sum::<f64>() * inv_n;

    // Both images read zero outside the mask, so windows straddling its
    // edge compare like with like.
    let targets: Vec<Vec<f64>> = (0..ch)
        .map(|c| {
            let mut t = channel_of(target, c);
            for (v, p) in t.iter_mut().zip(&pixels) {
                if !p.valid {
                    *v = 0.0;
                }
            }
            t
        })
        .collect();
    let warped: Vec<Vec<f64>> = (0..ch)
        .map(|c| {
            pixels
                .iter()
                .map(|p| if p.valid { p.sample[c] } else { 0.0 })
                .collect()
        })
        .collect();
    let stats: Vec<_> = (0..ch)
        .map(|c| ssim_stats(&targets[c], &warped[c], w, h))
        .collect();
    let ssim_map: Vec<f64> = (0..w * h)
        .map(|i| {
            if !pixels[i].valid {
                return 0.0;
            }
            let s = stats.iter().map(|st| st.ssim[i]).sum::<f64>() * inv_c;
            (1.0 - s) / 2.0
        })
        .collect();
    let ssim = ssim_map.iter().sum::<f64>() * inv_n;

    let mut grad_pose = [0.0; 6];
    let grad_inv = if want_gradient {
        let lambda_ssim = inputs.weights.lambda_ssim;
        let coef: Vec<f64> = pixels
            .iter()
            .map(|p| if p.valid { -0.5 * inv_n * inv_c } else { 0.0 })
            .collect();
        let ssim_grads: Vec<Vec<f64>> = (0..ch)
            .map(|c| ssim_adjoint(&stats[c], &targets[c], &warped[c], &coef, w, h))
            .collect();
        let per_pixel = par::map_range(w * h, |i| {
            let p = &pixels[i];
            if !p.valid {
                return (0.0, [0.0; 6]);
            }
            let t = target.pixel(i);
            let mut g = [0.0; 2];
            for c in 0..ch {
                let diff = p.sample[c] - t[c];
                let sign = if diff > 0.0 {
                    1.0
                } else if diff < 0.0 {
                    -1.0
                } else {
                    0.0
                };
                let k = inv_n * p.weight * sign * inv_c + lambda_ssim * ssim_grads[c][i];
                g[0] += k * p.grad[c][0];
                g[1] += k * p.grad[c][1];
            }
            g[0] += inv_n * abs_err[i] * p.d_weight[0];
            g[1] += inv_n * abs_err[i] * p.d_weight[1];
            let g_depth = g[0] * p.d_depth[0] + g[1] * p.d_depth[1];
            let mut gp = [0.0; 6];
            for (j, v) in gp.iter_mut().enumerate() {
                *v = g[0] * p.d_pose[0][j] + g[1] * p.d_pose[1][j];
            }
            // D = 1/u, dD/du = -D^2.
            (-g_depth * p.depth * p.depth, gp)
        });
        let mut gi = Vec::with_capacity(w * h);
        for (g, gp) in per_pixel {
            gi.push(g);
            for j in 0..6 {
                grad_pose[j] += gp[j];
            }
        }
        Some(gi)
    } else {
        None
    };
    Ok(SourceLevel {
        warp,
        ssim,
        warp_map,
        ssim_map,
        pixels,
        grad_inv,
        grad_pose,
    })
}

/// Evaluates the total objective and, if requested, its gradient.
pub fn evaluate(
    inputs: &LossInputs,
    state: &LossState,
    want_gradient: bool,
) -> Result<(LossReport, Option<LossGradient>)> {
    check_inputs(inputs, state)?;
    let prep = prepare(inputs)?;
    let weights = &inputs.weights;
    let ns = inputs.sources.len();
    let (w, h) = (prep.width, prep.height);
    let mut levels = Vec::with_capacity(weights.levels);
    let mut maps = PixelMaps {
        width: w,
        height: h,
        ..Default::default()
    };
    let mut grad = want_gradient.then(|| LossGradient {
        inv_depths: vec![vec![0.0; w * h]; ns],
        poses: vec![[0.0; 6]; ns],
    });

    for (l, sampler) in prep.samplers.iter().enumerate() {
        let coarse: Vec<_> = state
            .inv_depths
            .iter()
            .map(|d| sampler.coarse(d.values(), d.valid()))
            .collect();
        let full: Vec<_> = coarse.iter().map(|(v, m)| sampler.to_full(v, m)).collect();
        let per_source = (0..ns)
            .map(|s| {
                source_level(
                    inputs,
                    &prep,
                    s,
                    &state.poses[s],
                    &full[s].0,
                    &full[s].1,
                    want_gradient,
                )
            })
            .collect::<Result<Vec<_>>>()?;

        let (gray, cw, chh) = &prep.grays[l];
        let smooth_parts = coarse
            .iter()
            .map(|(v, m)| {
                smoothness_terms(v, m, gray, *cw, *chh, weights.smoothness, want_gradient)
            })
            .collect::<Result<Vec<_>>>()?;
        let smooth = smooth_parts.iter().map(|(m, _)| m.value).sum::<f64>() / ns as f64;

        let mut depth_grads: Option<Vec<Vec<f64>>> = None;
        let depth = if ns >= 2 {
            let joint: Vec<bool> = (0..w * h)
                .map(|i| full.iter().all(|(v, m)| m[i] && v[i] > 0.0))
                .collect();
            let values: Vec<Vec<f64>> = full
                .iter()
                .map(|(v, _)| match weights.consistency {
                    ConsistencyDomain::Depth => v
                        .iter()
                        .map(|u| if *u > 0.0 { 1.0 / u } else { 0.0 })
                        .collect(),
                    ConsistencyDomain::InverseDepth => v.clone(),
                })
                .collect();
            let refs: Vec<&[f64]> = values.iter().map(|v| v.as_slice()).collect();
            let (value, g) = pairwise_abs(&refs, &joint, want_gradient)?;
            depth_grads = g.map(|mut g| {
                if weights.consistency == ConsistencyDomain::Depth {
                    for (gs, vs) in g.iter_mut().zip(&values) {
                        for (gi, d) in gs.iter_mut().zip(vs) {
                            *gi *= -d * d;
                        }
                    }
                }
                g
            });
            value
        } else {
            0.0
        };

        let terms = LevelTerms {
            level: l,
            warp: per_source.iter().map(|s| s.warp).sum(),
            smooth,
            ssim: per_source.iter().map(|s| s.ssim).sum(),
            depth,
        };
        levels.push(terms);

        if let Some(g) = grad.as_mut() {
            for s in 0..ns {
                let mut g_full = per_source[s]
                    .grad_inv
                    .clone()
                    .unwrap_or_else(|| vec![0.0; w * h]);
                if let Some(dg) = &depth_grads {
                    for (a, b) in g_full.iter_mut().zip(&dg[s]) {
                        *a += weights.lambda_depth * b;
                    }
                }
                let mut g_coarse = sampler.to_full_adjoint(&g_full);
                if let Some(sg) = &smooth_parts[s].1 {
                    let k = weights.lambda_smooth / ns as f64;
                    for (a, b) in g_coarse.iter_mut().zip(sg) {
                        *a += k * b;
                    }
                }
                for (a, b) in g.inv_depths[s]
                    .iter_mut()
                    .zip(sampler.coarse_adjoint(&g_coarse))
                {
                    *a += b;
                }
                for j in 0..6 {
                    g.poses[s][j] += per_source[s].grad_pose[j];
                }
            }
        }

        if l == 0 {
            maps.warp = vec![0.0; w * h];
            maps.ssim = vec![0.0; w * h];
            maps.epipolar_weight = vec![0.0; w * h];
            maps.valid = vec![false; w * h];
            let mut seen = vec![0usize; w * h];
            for sl in &per_source {
                for i in 0..w * h {
                    maps.warp[i] += sl.warp_map[i];
                    maps.ssim[i] += sl.ssim_map[i];
                    if sl.pixels[i].valid {
                        maps.epipolar_weight[i] += sl.pixels[i].weight;
                        seen[i] += 1;
                    }
                }
            }
            for i in 0..w * h {
                maps.valid[i] = seen[i] > 0;
                maps.epipolar_weight[i] = if seen[i] > 0 {
                    maps.epipolar_weight[i] / seen[i] as f64
                } else {
                    1.0
                };
            }
            maps.smooth = vec![0.0; w * h];
            for (m, _) in &smooth_parts {
                for (a, b) in maps.smooth.iter_mut().zip(&m.map) {
                    *a += b / ns as f64;
                }
            }
        }
    }
    let total = levels.iter().map(|t| t.combined(weights)).sum();
    Ok((
        LossReport {
            levels,
            total,
            maps,
        },
        grad,
    ))
}

/// Total objective for depth maps given per source.
pub fn total_loss(
    target: &ImageBuffer,
    sources: &[ImageBuffer],
    depths: &[DepthMap],
    poses: &[PoseSE3],
    essentials: &[Option<EssentialMatrix>],
    k: &CameraIntrinsics,
    weights: &LossWeights,
) -> Result<LossReport> {
    let inputs = LossInputs {
        target,
        sources,
        essentials,
        k: *k,
        weights: *weights,
    };
    let state = LossState {
        inv_depths: depths.iter().map(|d| d.to_inverse()).collect(),
        poses: poses.to_vec(),
    };
    Ok(evaluate(&inputs, &state, false)?.0)
}

/// Fingerprint of the piecewise structure of the objective at `state`: the
/// bilinear cell and validity of every warped pixel at every level, plus
/// the sign of every quantity inside an absolute value (photometric,
/// epipolar, smoothness and consistency terms). Within a region of constant signature the objective is smooth,
/// so finite-difference checks compare it on both sides of a probe.
pub fn sampling_signature(inputs: &LossInputs, state: &LossState) -> Result<u64> {
    check_inputs(inputs, state)?;
    let prep = prepare(inputs)?;
    let ch = inputs.target.channels();
    let mut hasher = DefaultHasher::new();
    for (l, sampler) in prep.samplers.iter().enumerate() {
        let (_, cw, chh) = &prep.grays[l];
        let mut full = Vec::with_capacity(state.inv_depths.len());
        for (s, d) in state.inv_depths.iter().enumerate() {
            let (cv, cm) = sampler.coarse(d.values(), d.valid());
            smoothness_signs(&cv, &cm, *cw, *chh, inputs.weights.smoothness).hash(&mut hasher);
            let (v, m) = sampler.to_full(&cv, &cm);
            let pixels = warp_pixels(inputs, &prep, s, &state.poses[s], &v, &m);
            for (i, p) in pixels.iter().enumerate() {
                p.valid.hash(&mut hasher);
                if !p.valid {
                    continue;
                }
                p.cell.hash(&mut hasher);
                let t = inputs.target.pixel(i);
                for c in 0..ch {
                    (p.sample[c] > t[c]).hash(&mut hasher);
                }
                (p.residual > 0.0).hash(&mut hasher);
                (p.residual.abs() >= inputs.weights.max_log_weight).hash(&mut hasher);
            }
            full.push(v);
        }
        for i in 0..prep.width * prep.height {
            for a in 0..full.len() {
                for b in a + 1..full.len() {
                    (full[a][i] > full[b][i]).hash(&mut hasher);
                }
            }
        }
    }
    Ok(hasher.finish())
}
