//! Depth error/accuracy metrics with median scaling and range caps, and
//! snippet-based trajectory metrics (ATE, ATDE).

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{angle_between, PoseSE3};
use crate::par;
use crate::raster::DepthMap;

/// Accuracy thresholds `δ < 1.25^k`, `k = 1, 2, 3`.
pub const DELTA_THRESHOLDS: [f64; 3] = [1.25, 1.25 * 1.25, 1.25 * 1.25 * 1.25];

pub const CAP_80M: f64 = 80.0;
pub const CAP_50M: f64 = 50.0;
pub const DEFAULT_MIN_DEPTH: f64 = 1e-3;

/// Pixel rectangle `[x0, x1) x [y0, y1)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CropRect {
    pub x0: usize,
    pub y0: usize,
    pub x1: usize,
    pub y1: usize,
}

impl CropRect {
    fn contains(&self, x: usize, y: usize) -> bool {
        x >= self.x0 && x < self.x1 && y >= self.y0 && y < self.y1
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DepthEvalConfig {
    pub cap: f64,
    pub min_depth: f64,
    pub median_scaling: bool,
    pub crop: Option<CropRect>,
}

impl Default for DepthEvalConfig {
    fn default() -> Self {
        Self::cap_80m()
    }
}

impl DepthEvalConfig {
    pub fn cap_80m() -> Self {
        Self {
            cap: CAP_80M,
            min_depth: DEFAULT_MIN_DEPTH,
            median_scaling: true,
            crop: None,
        }
    }

    pub fn cap_50m() -> Self {
        Self {
            cap: CAP_50M,
            ..Self::cap_80m()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.min_depth > 0.0 && self.cap > self.min_depth && self.cap.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "need cap > min_depth > 0, got cap={} min_depth={}",
                self.cap, self.min_depth
            )));
        }
        if let Some(c) = self.crop {
            if c.x0 >= c.x1 || c.y0 >= c.y1 {
                return Err(Error::InvalidInput("crop rectangle is empty".into()));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct DepthEvalResult {
    pub abs_rel: f64,
    pub sq_rel: f64,
    pub rmse: f64,
    pub rmse_log: f64,
    pub acc_1: f64,
    pub acc_2: f64,
    pub acc_3: f64,
}

impl DepthEvalResult {
    pub const COLUMNS: [&'static str; 7] = [
        "abs_rel", "sq_rel", "rmse", "rmse_log", "acc_1", "acc_2", "acc_3",
    ];

    pub fn to_array(&self) -> [f64; 7] {
        [
            self.abs_rel,
            self.sq_rel,
            self.rmse,
            self.rmse_log,
            self.acc_1,
            self.acc_2,
            self.acc_3,
        ]
    }

    pub fn from_array(a: [f64; 7]) -> Self {
        Self {
            abs_rel: a[0],
            sq_rel: a[1],
            rmse: a[2],
            rmse_log: a[3],
            acc_1: a[4],
            acc_2: a[5],
            acc_3: a[6],
        }
    }
}

/// Median with the two middle elements averaged for even lengths.
pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    })
}

/// Evaluates a dense prediction against sparse ground truth.
///
/// Pixels count when the ground truth is valid, within `[min_depth, cap]`
/// and inside the crop. With median scaling the prediction is multiplied by
/// `median(gt) / median(pred)` over those pixels; the (scaled) prediction
/// is then clamped to `[min_depth, cap]`.
pub fn eval_depth(
    pred: &DepthMap,
    gt: &DepthMap,
    cfg: &DepthEvalConfig,
) -> Result<DepthEvalResult> {
    cfg.validate()?;
    if pred.width() != gt.width() || pred.height() != gt.height() {
        return Err(Error::Shape(format!(
            "prediction is {}x{}, ground truth {}x{}",
            pred.width(),
            pred.height(),
            gt.width(),
            gt.height()
        )));
    }
    let w = gt.width();
    let mut p = Vec::new();
    let mut g = Vec::new();
    for (i, (&gv, &ok)) in gt.values().iter().zip(gt.valid()).enumerate() {
        if !ok || gv < cfg.min_depth || gv > cfg.cap {
            continue;
        }
        if cfg.crop.is_some_and(|c| !c.contains(i % w, i / w)) {
            continue;
        }
        if !pred.valid()[i] {
            return Err(Error::InvalidInput(format!(
                "prediction missing at evaluated pixel ({}, {})",
                i % w,
                i / w
            )));
        }
        p.push(pred.values()[i]);
        g.push(gv);
    }
    if g.is_empty() {
        return Err(Error::EmptyInput(
            "no ground-truth pixels pass the cap and crop filters".into(),
        ));
    }
    let scale = if cfg.median_scaling {
        median(&g).unwrap_or(1.0) / median(&p).unwrap_or(1.0)
    } else {
        1.0
    };
    let n = g.len() as f64;
    let mut acc = [0.0f64; 7];
    for (pv, gv) in p.iter().zip(&g) {
        let pv = (pv * scale).clamp(cfg.min_depth, cfg.cap);
        let d = pv - gv;
        acc[0] += d.abs() / gv;
        acc[1] += d * d / gv;
        acc[2] += d * d;
        let dl = pv.ln() - gv.ln();
        acc[3] += dl * dl;
        let delta = (pv / gv).max(gv / pv);
        for (k, thr) in DELTA_THRESHOLDS.iter().enumerate() {
            if delta < *thr {
                acc[4 + k] += 1.0;
            }
        }
    }
    Ok(DepthEvalResult {
        abs_rel: acc[0] / n,
        sq_rel: acc[1] / n,
        rmse: (acc[2] / n).sqrt(),
        rmse_log: (acc[3] / n).sqrt(),
        acc_1: acc[4] / n,
        acc_2: acc[5] / n,
        acc_3: acc[6] / n,
    })
}

/// Population mean and standard deviation.
pub fn mean_std(values: &[f64]) -> Option<(f64, f64)> {
    if values.is_empty() {
        return None;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    Some((mean, var.sqrt()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DepthEvalSummary {
    pub count: usize,
    pub mean: DepthEvalResult,
    pub std: DepthEvalResult,
    pub per_frame: Vec<DepthEvalResult>,
}

/// Evaluates many frames (in parallel) and aggregates mean and std.
pub fn eval_depth_batch(
    pairs: &[(DepthMap, DepthMap)],
    cfg: &DepthEvalConfig,
) -> Result<DepthEvalSummary> {
    if pairs.is_empty() {
        return Err(Error::EmptyInput("no frames to evaluate".into()));
    }
    let per_frame = par::map_slice(pairs, |(p, g)| eval_depth(p, g, cfg))
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    let mut mean = [0.0; 7];
    let mut std = [0.0; 7];
    for k in 0..7 {
        let col: Vec<f64> = per_frame.iter().map(|r| r.to_array()[k]).collect();
        let (m, s) = mean_std(&col).unwrap_or((0.0, 0.0));
        mean[k] = m;
        std[k] = s;
    }
    Ok(DepthEvalSummary {
        count: per_frame.len(),
        mean: DepthEvalResult::from_array(mean),
        std: DepthEvalResult::from_array(std),
        per_frame,
    })
}

/// Consecutive absolute poses (camera-to-world) with their frame ids.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectorySnippet {
    pub frame_ids: Vec<usize>,
    pub poses: Vec<PoseSE3>,
}

impl TrajectorySnippet {
    pub fn new(frame_ids: Vec<usize>, poses: Vec<PoseSE3>) -> Result<Self> {
        if frame_ids.len() != poses.len() {
            return Err(Error::Shape(format!(
                "{} frame ids for {} poses",
                frame_ids.len(),
                poses.len()
            )));
        }
        if poses.len() < 2 {
            return Err(Error::InsufficientData {
                needed: 2,
                got: poses.len(),
            });
        }
        Ok(Self { frame_ids, poses })
    }

    /// Camera positions expressed in the first frame of the snippet.
    pub fn anchored_positions(&self) -> Vec<Vector3<f64>> {
        let first_inv = self.poses[0].inverse();
        self.poses
            .iter()
            .map(|p| first_inv.compose(p).translation)
            .collect()
    }
}

fn check_pair(pred: &TrajectorySnippet, gt: &TrajectorySnippet) -> Result<()> {
    if pred.poses.len() != gt.poses.len() {
        return Err(Error::Shape(format!(
            "snippet lengths differ: {} vs {}",
            pred.poses.len(),
            gt.poses.len()
        )));
    }
    if pred.frame_ids != gt.frame_ids {
        return Err(Error::Shape("snippet frame ids differ".into()));
    }
    Ok(())
}

/// Least-squares scale aligning `pred` to `gt`, and the RMS residual.
pub fn scale_aligned_rmse(pred: &[Vector3<f64>], gt: &[Vector3<f64>]) -> (f64, f64) {
    let num: f64 = pred.iter().zip(gt).map(|(p, g)| p.dot(g)).sum();
    let den: f64 = pred.iter().map(|p| p.norm_squared()).sum();
    let scale = if den > 0.0 { num / den } else { 0.0 };
    let sq: f64 = pred
        .iter()
        .zip(gt)
        .map(|(p, g)| (p * scale - g).norm_squared())
        .sum();
    (scale, (sq / gt.len() as f64).sqrt())
}

/// Absolute trajectory error after anchoring both snippets at their first
/// frame and fitting a single scale to the predicted translations.
pub fn ate_snippet(pred: &TrajectorySnippet, gt: &TrajectorySnippet) -> Result<f64> {
    check_pair(pred, gt)?;
    Ok(scale_aligned_rmse(&pred.anchored_positions(), &gt.anchored_positions()).1)
}

/// Angle between two translation directions, in `[0, π]`.
pub fn atde(pred_t: &Vector3<f64>, gt_t: &Vector3<f64>) -> Result<f64> {
    angle_between(pred_t, gt_t)
        .ok_or_else(|| Error::DegenerateMotion("zero-length translation".into()))
}

/// Mean translation-direction error over the frames after the first,
/// skipping frames where either anchored translation vanishes.
pub fn atde_snippet(pred: &TrajectorySnippet, gt: &TrajectorySnippet) -> Result<f64> {
    check_pair(pred, gt)?;
    let (p, g) = (pred.anchored_positions(), gt.anchored_positions());
    let angles: Vec<f64> = p[1..]
        .iter()
        .zip(&g[1..])
        .filter_map(|(a, b)| atde(a, b).ok())
        .collect();
    mean_std(&angles).map(|(m, _)| m).ok_or_else(|| {
        Error::DegenerateMotion("no frame with nonzero translation in snippet".into())
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoseEvalSummary {
    pub snippets: usize,
    pub snippet_length: usize,
    pub ate_mean: f64,
    pub ate_std: f64,
    pub atde_mean: f64,
    pub atde_std: f64,
}

/// Slides a window of `snippet_length` frames (stride 1) along two
/// aligned trajectories and aggregates ATE and ATDE.
pub fn eval_trajectory(
    pred: &[PoseSE3],
    gt: &[PoseSE3],
    snippet_length: usize,
) -> Result<PoseEvalSummary> {
    if pred.len() != gt.len() {
        return Err(Error::Shape(format!(
            "trajectories have {} and {} poses",
            pred.len(),
            gt.len()
        )));
    }
    if snippet_length < 2 {
        return Err(Error::InvalidInput(
            "snippet length must be at least 2".into(),
        ));
    }
    if gt.len() < snippet_length {
        return Err(Error::InsufficientData {
            needed: snippet_length,
            got: gt.len(),
        });
    }
    let starts: Vec<usize> = (0..=gt.len() - snippet_length).collect();
    let per = par::map_slice(&starts, |&s| -> Result<(f64, Option<f64>)> {
        let ids: Vec<usize> = (s..s + snippet_length).collect();
        let p = TrajectorySnippet::new(ids.clone(), pred[s..s + snippet_length].to_vec())?;
        let g = TrajectorySnippet::new(ids, gt[s..s + snippet_length].to_vec())?;
        Ok((ate_snippet(&p, &g)?, atde_snippet(&p, &g).ok()))
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    let ates: Vec<f64> = per.iter().map(|x| x.0).collect();
    let atdes: Vec<f64> = per.iter().filter_map(|x| x.1).collect();
    let (ate_mean, ate_std) = mean_std(&ates).unwrap_or((0.0, 0.0));
    let (atde_mean, atde_std) = mean_std(&atdes).unwrap_or((f64::NAN, f64::NAN));
    Ok(PoseEvalSummary {
        snippets: per.len(),
        snippet_length,
        ate_mean,
        ate_std,
        atde_mean,
        atde_std,
    })
}
