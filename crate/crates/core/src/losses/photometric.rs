use nalgebra::Vector3;

use crate::error::{Error, Result};
use crate::geometry::{CameraIntrinsics, EssentialMatrix};
use crate::raster::ImageBuffer;
use crate::warp::WarpField;

/// Default cap on the exponent of the epipolar weight.
pub const DEFAULT_MAX_LOG_WEIGHT: f64 = 10.0;

/// A scalar loss and its per-pixel contributions (zero where masked out).
#[derive(Debug, Clone, PartialEq)]
pub struct LossMap {
    pub value: f64,
    pub map: Vec<f64>,
}

pub(crate) fn check_pair(a: &ImageBuffer, b: &ImageBuffer, mask: &[bool]) -> Result<()> {
    if !a.same_shape(b) {
        return Err(Error::Shape(format!(
            "images differ: {}x{}x{} vs {}x{}x{}",
            a.width(),
            a.height(),
            a.channels(),
            b.width(),
            b.height(),
            b.channels()
        )));
    }
    if mask.len() != a.len() {
        return Err(Error::Shape(format!(
            "mask has {} entries, image {}",
            mask.len(),
            a.len()
        )));
    }
    Ok(())
}

/// Channel-mean absolute difference at pixel `i`.
#[inline]
pub(crate) fn abs_diff(target: &ImageBuffer, warped: &ImageBuffer, i: usize) -> f64 {
    let a = target.pixel(i);
    let b = warped.pixel(i);
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>() / a.len() as f64
}

/// Mean absolute intensity difference over masked pixels.
pub fn photometric_loss(
    target: &ImageBuffer,
    warped: &ImageBuffer,
    mask: &[bool],
) -> Result<LossMap> {
    check_pair(target, warped, mask)?;
    let map: Vec<f64> = (0..target.len())
        .map(|i| {
            if mask[i] {
                abs_diff(target, warped, i)
            } else {
                0.0
            }
        })
        .collect();
    let n = mask.iter().filter(|&&m| m).count();
    if n == 0 {
        return Err(Error::EmptyInput(
            "photometric mask selects no pixels".into(),
        ));
    }
    Ok(LossMap {
        value: map.iter().sum::<f64>() / n as f64,
        map,
    })
}

/// Per-pixel `exp(|p̂̃^T E p̃|)`.
#[derive(Debug, Clone, PartialEq)]
pub struct EpipolarWeightMap {
    pub weights: Vec<f64>,
    /// Signed algebraic residual `p̂̃^T E p̃` (zero where invalid).
    pub residuals: Vec<f64>,
    pub valid: Vec<bool>,
}

/// Epipolar residual and weight for one target pixel warped to `coord`.
/// Returns `(residual, weight, d weight / d coord)`.
#[inline]
pub(crate) fn epipolar_weight_at(
    e: &EssentialMatrix,
    kinv: &nalgebra::Matrix3<f64>,
    target_ray: &Vector3<f64>,
    coord: [f64; 2],
    max_log_weight: f64,
) -> (f64, f64, [f64; 2]) {
    let line = e.e * target_ray;
    let src = kinv * Vector3::new(coord[0], coord[1], 1.0);
    let r = src.dot(&line);
    let a = r.abs();
    if a >= max_log_weight {
        return (r, max_log_weight.exp(), [0.0, 0.0]);
    }
    let w = a.exp();
    // d r / d coord = (K^-T E p̃)[0..2]
    let g = kinv.transpose() * line;
    let s = w * r.signum() * if r == 0.0 { 0.0 } else { 1.0 };
    (r, w, [s * g.x, s * g.y])
}

/// Weights every valid pixel of `field` by its epipolar residual under `e`.
pub fn epipolar_weight_map(
    e: &EssentialMatrix,
    field: &WarpField,
    k: &CameraIntrinsics,
) -> Result<EpipolarWeightMap> {
    epipolar_weight_map_clamped(e, field, k, DEFAULT_MAX_LOG_WEIGHT)
}

pub fn epipolar_weight_map_clamped(
    e: &EssentialMatrix,
    field: &WarpField,
    k: &CameraIntrinsics,
    max_log_weight: f64,
) -> Result<EpipolarWeightMap> {
    let e = e.normalized()?;
    let kinv = k.inverse_matrix();
    let n = field.len();
    let mut weights = vec![1.0; n];
    let mut residuals = vec![0.0; n];
    for i in 0..n {
        if !field.valid[i] {
            continue;
        }
        let (x, y) = (i % field.width, i / field.width);
        let ray = kinv * Vector3::new(x as f64, y as f64, 1.0);
        let (r, w, _) = epipolar_weight_at(&e, &kinv, &ray, field.coords[i], max_log_weight);
        weights[i] = w;
        residuals[i] = r;
    }
    Ok(EpipolarWeightMap {
        weights,
        residuals,
        valid: field.valid.clone(),
    })
}

/// Photometric loss with each pixel's error scaled by its epipolar weight.
pub fn weighted_photometric_loss(
    target: &ImageBuffer,
    warped: &ImageBuffer,
    mask: &[bool],
    weights: &EpipolarWeightMap,
) -> Result<LossMap> {
    check_pair(target, warped, mask)?;
    if weights.weights.len() != target.len() {
        return Err(Error::Shape(
            "weight map resolution differs from image".into(),
        ));
    }
    let use_px = |i: usize| mask[i] && weights.valid[i];
    let map: Vec<f64> = (0..target.len())
        .map(|i| {
            if use_px(i) {
                abs_diff(target, warped, i) * weights.weights[i]
            } else {
                0.0
            }
        })
        .collect();
    let n = (0..target.len()).filter(|&i| use_px(i)).count();
    if n == 0 {
        return Err(Error::EmptyInput(
            "weighted photometric mask selects no pixels".into(),
        ));
    }
    Ok(LossMap {
        value: map.iter().sum::<f64>() / n as f64,
        map,
    })
}
