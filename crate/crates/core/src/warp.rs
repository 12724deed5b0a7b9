//! Depth-image-based warping from the target view into a source view.
//!
//! A target pixel `p` with depth `D(p)` lands in the source image at
//! `p̂ ∝ K (R D(p) K^-1 p + t)`, dehomogenized by the third entry, where
//! `(R, t)` maps target-frame points into the source frame.

use nalgebra::{Matrix2x3, Matrix3, Vector3};

use crate::error::{Error, Result};
use crate::geometry::{CameraIntrinsics, PixelCoord, PoseSE3};
use crate::par;
use crate::raster::{bilinear_taps, DepthMap, ImageBuffer, InverseDepthMap, Resampler, ScalarMap};

/// Projected depths at or below this are behind (or on) the source camera.
pub const MIN_PROJECTED_DEPTH: f64 = 1e-9;

/// Number of pyramid levels used by default in the multi-scale loss.
pub const DEFAULT_LEVELS: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WarpedPixel {
    pub coord: [f64; 2],
    pub projected_depth: f64,
    /// False when the point lands behind the source camera.
    pub valid: bool,
}

/// Per-target-pixel continuous source coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct WarpField {
    pub width: usize,
    pub height: usize,
    pub coords: Vec<[f64; 2]>,
    /// In bounds of the source image and in front of the source camera.
    pub valid: Vec<bool>,
}

impl WarpField {
    pub fn len(&self) -> usize {
        self.coords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }
}

fn check_depth(depth: f64) -> Result<()> {
    if !(depth.is_finite() && depth > 0.0) {
        return Err(Error::InvalidDepth(depth));
    }
    Ok(())
}

#[inline]
fn transform_ray(pose: &PoseSE3, depth: f64, ray: &Vector3<f64>) -> Vector3<f64> {
    pose.rotation * (ray * depth) + pose.translation
}

#[inline]
fn project_h(k: &CameraIntrinsics, y: &Vector3<f64>) -> Option<[f64; 2]> {
    if y.z <= MIN_PROJECTED_DEPTH {
        return None;
    }
    let h = k.matrix() * y;
    Some([h.x / h.z, h.y / h.z])
}

pub fn warp_pixel(
    k: &CameraIntrinsics,
    pose: &PoseSE3,
    depth: f64,
    p: &PixelCoord,
) -> Result<WarpedPixel> {
    check_depth(depth)?;
    let ray = k.inverse_matrix() * p.as_vector();
    let y = transform_ray(pose, depth, &ray);
    Ok(match project_h(k, &y) {
        Some(coord) => WarpedPixel {
            coord,
            projected_depth: y.z,
            valid: true,
        },
        None => WarpedPixel {
            coord: [f64::NAN, f64::NAN],
            projected_depth: y.z,
            valid: false,
        },
    })
}

/// Analytic derivatives of `p̂` at one pixel.
///
/// Pose derivatives are for the left update `[Exp(w) | v] ∘ pose`, columns
/// ordered `(w_x, w_y, w_z, v_x, v_y, v_z)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WarpJacobian {
    pub coord: [f64; 2],
    pub d_depth: [f64; 2],
    pub d_pose: [[f64; 6]; 2],
}

/// Derivative of `p̂` with respect to the camera-frame point `Y` in the
/// source frame.
#[inline]
fn projection_jacobian(k: &CameraIntrinsics, y: &Vector3<f64>) -> Matrix2x3<f64> {
    let u = k.matrix() * y;
    let iz = 1.0 / u.z;
    let j_pi = Matrix2x3::new(iz, 0.0, -u.x * iz * iz, 0.0, iz, -u.y * iz * iz);
    j_pi * k.matrix()
}

pub(crate) fn jacobian_from_ray(
    k: &CameraIntrinsics,
    pose: &PoseSE3,
    depth: f64,
    ray: &Vector3<f64>,
) -> Option<WarpJacobian> {
    let y = transform_ray(pose, depth, ray);
    let coord = project_h(k, &y)?;
    let a = projection_jacobian(k, &y);
    let dd = a * (pose.rotation * ray);
    // d(Exp(w) Y)/dw at w = 0 is -[Y]x.
    let skew_y = Matrix3::new(0.0, -y.z, y.y, y.z, 0.0, -y.x, -y.y, y.x, 0.0);
    let dw = -(a * skew_y);
    let mut d_pose = [[0.0; 6]; 2];
    for r in 0..2 {
        for c in 0..3 {
            d_pose[r][c] = dw[(r, c)];
            d_pose[r][3 + c] = a[(r, c)];
        }
    }
    Some(WarpJacobian {
        coord,
        d_depth: [dd.x, dd.y],
        d_pose,
    })
}

pub fn warp_jacobian(
    k: &CameraIntrinsics,
    pose: &PoseSE3,
    depth: f64,
    p: &PixelCoord,
) -> Result<WarpJacobian> {
    check_depth(depth)?;
    let ray = k.inverse_matrix() * p.as_vector();
    jacobian_from_ray(k, pose, depth, &ray)
        .ok_or_else(|| Error::InvalidWarp("point projects behind the source camera".into()))
}

/// `K^-1 p` for every pixel centre of a `width x height` grid.
pub fn pixel_rays(k: &CameraIntrinsics, width: usize, height: usize) -> Vec<Vector3<f64>> {
    let kinv = k.inverse_matrix();
    let mut rays = Vec::with_capacity(width * height);
    for y in 0..height {
        for x in 0..width {
            rays.push(kinv * Vector3::new(x as f64, y as f64, 1.0));
        }
    }
    rays
}

/// Warps every valid target pixel into the source image.
pub fn warp_field(
    depth: &DepthMap,
    pose: &PoseSE3,
    k: &CameraIntrinsics,
    source_width: usize,
    source_height: usize,
) -> WarpField {
    let rays = pixel_rays(k, depth.width(), depth.height());
    let values = depth.values();
    let valid = depth.valid();
    let out = par::map_range(rays.len(), |i| {
        if !valid[i] {
            return ([f64::NAN, f64::NAN], false);
        }
        let y = transform_ray(pose, values[i], &rays[i]);
        match project_h(k, &y) {
            Some(c) => {
                let inside = bilinear_taps(source_width, source_height, c[0], c[1]).is_some();
                (c, inside)
            }
            None => ([f64::NAN, f64::NAN], false),
        }
    });
    let (coords, valid) = out.into_iter().unzip();
    WarpField {
        width: depth.width(),
        height: depth.height(),
        coords,
        valid,
    }
}

#[derive(Debug, Clone)]
pub struct SynthesizedView {
    /// Source image resampled into the target frame (`Î_s`); zero where
    /// the mask is false.
    pub image: ImageBuffer,
    pub mask: Vec<bool>,
    pub field: WarpField,
}

/// Inverse-warps `source` into the target frame using the target depth.
pub fn synthesize_view(
    source: &ImageBuffer,
    target_depth: &DepthMap,
    pose: &PoseSE3,
    k: &CameraIntrinsics,
) -> Result<SynthesizedView> {
    if source.width() != target_depth.width() || source.height() != target_depth.height() {
        return Err(Error::Shape(format!(
            "source is {}x{} but depth is {}x{}",
            source.width(),
            source.height(),
            target_depth.width(),
            target_depth.height()
        )));
    }
    let field = warp_field(target_depth, pose, k, source.width(), source.height());
    let image = sample_field(source, &field);
    Ok(SynthesizedView {
        image,
        mask: field.valid.clone(),
        field,
    })
}

/// Samples `source` at every valid coordinate of `field`.
pub fn sample_field(source: &ImageBuffer, field: &WarpField) -> ImageBuffer {
    let ch = source.channels();
    let pixels = par::map_range(field.len(), |i| {
        let mut v = [0.0; 3];
        if field.valid[i] {
            let [x, y] = field.coords[i];
            if let Some(t) = bilinear_taps(source.width(), source.height(), x, y) {
                for (c, out) in v.iter_mut().enumerate().take(ch) {
                    *out = t.sample(source, c);
                }
            }
        }
        v
    });
    let data = pixels
        .iter()
        .flat_map(|v| v[..ch].iter().copied())
        .collect();
    ImageBuffer::from_raw(field.width, field.height, ch, data)
}

/// Bilinear upsampling of a depth map to a larger grid. The validity mask
/// is upsampled conservatively: an output is valid only if every input
/// pixel contributing to it is valid.
pub fn upsample_depth(d: &DepthMap, target_w: usize, target_h: usize) -> Result<DepthMap> {
    if target_w == d.width() && target_h == d.height() {
        return Ok(d.clone());
    }
    let op = Resampler::upsample(d.width(), d.height(), target_w, target_h)?;
    DepthMap::from_map(op.apply_map(d.as_map()))
}

/// Scales inverse depth so its mean over valid pixels is one.
pub fn normalize_inverse_depth(d: &InverseDepthMap) -> Result<InverseDepthMap> {
    Ok(normalize_inverse_depth_with_scale(d)?.0)
}

/// Like [`normalize_inverse_depth`], also returning the mean divided out.
pub fn normalize_inverse_depth_with_scale(d: &InverseDepthMap) -> Result<(InverseDepthMap, f64)> {
    let (sum, n) = d
        .values()
        .iter()
        .zip(d.valid())
        .filter(|(_, ok)| **ok)
        .fold((0.0, 0usize), |(s, n), (v, _)| (s + v, n + 1));
    if n == 0 {
        return Err(Error::EmptyInput(
            "inverse depth has no valid pixels".into(),
        ));
    }
    let mean = sum / n as f64;
    let values = d
        .values()
        .iter()
        .zip(d.valid())
        .map(|(v, ok)| if *ok { v / mean } else { 0.0 })
        .collect();
    let map = ScalarMap::new(d.width(), d.height(), values, d.valid().to_vec())?;
    Ok((InverseDepthMap::from_map(map)?, mean))
}

/// Down/up-sampling chain for one pyramid level: `level` box halvings,
/// then bilinear upsampling back to full resolution.
#[derive(Debug, Clone)]
pub struct LevelSampler {
    pub level: usize,
    downs: Vec<Resampler>,
    up: Option<Resampler>,
}

impl LevelSampler {
    pub fn new(width: usize, height: usize, level: usize) -> Result<Self> {
        let mut downs = Vec::with_capacity(level);
        let (mut w, mut h) = (width, height);
        for _ in 0..level {
            let d = Resampler::downsample2(w, h)?;
            w = d.out_width;
            h = d.out_height;
            downs.push(d);
        }
        let up = if level > 0 {
            Some(Resampler::upsample(w, h, width, height)?)
        } else {
            None
        };
        Ok(Self { level, downs, up })
    }

    pub fn coarse_size(&self, width: usize, height: usize) -> (usize, usize) {
        self.downs
            .last()
            .map_or((width, height), |d| (d.out_width, d.out_height))
    }

    pub fn coarse(&self, values: &[f64], valid: &[bool]) -> (Vec<f64>, Vec<bool>) {
        let mut v = values.to_vec();
        let mut m = valid.to_vec();
        for d in &self.downs {
            v = d.apply(&v);
            m = d.apply_mask(&m);
        }
        (v, m)
    }

    pub fn to_full(&self, values: &[f64], valid: &[bool]) -> (Vec<f64>, Vec<bool>) {
        match &self.up {
            Some(u) => (u.apply(values), u.apply_mask(valid)),
            None => (values.to_vec(), valid.to_vec()),
        }
    }

    pub fn coarse_adjoint(&self, grad: &[f64]) -> Vec<f64> {
        let mut g = grad.to_vec();
        for d in self.downs.iter().rev() {
            g = d.apply_adjoint(&g);
        }
        g
    }

    pub fn to_full_adjoint(&self, grad: &[f64]) -> Vec<f64> {
        match &self.up {
            Some(u) => u.apply_adjoint(grad),
            None => grad.to_vec(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_pose_is_identity_warp() {
        let k = CameraIntrinsics::new(120.0, 110.0, 31.5, 23.5).unwrap();
        for depth in [0.3, 1.0, 7.25, 100.0] {
            let w = warp_pixel(
                &k,
                &PoseSE3::identity(),
                depth,
                &PixelCoord::new(12.0, 40.0),
            )
            .unwrap();
            assert!((w.coord[0] - 12.0).abs() < 1e-12 && (w.coord[1] - 40.0).abs() < 1e-12);
            assert!(w.valid);
        }
    }

    #[test]
    fn optical_axis_is_fixed_under_forward_motion() {
        let pose = PoseSE3::new(Matrix3::identity(), Vector3::new(0.0, 0.0, 1.0)).unwrap();
        let w = warp_pixel(
            &CameraIntrinsics::identity(),
            &pose,
            1.0,
            &PixelCoord::new(0.0, 0.0),
        )
        .unwrap();
        assert_eq!(w.coord, [0.0, 0.0]);
        assert_eq!(w.projected_depth, 2.0);
    }

    #[test]
    fn behind_camera_is_invalid() {
        let pose = PoseSE3::new(Matrix3::identity(), Vector3::new(0.0, 0.0, -5.0)).unwrap();
        let w = warp_pixel(
            &CameraIntrinsics::identity(),
            &pose,
            1.0,
            &PixelCoord::new(0.1, 0.2),
        )
        .unwrap();
        assert!(!w.valid);
        assert!(w.projected_depth < 0.0);
    }

    #[test]
    fn nonpositive_depth_is_an_error() {
        let k = CameraIntrinsics::identity();
        let p = PixelCoord::new(0.0, 0.0);
        assert!(matches!(
            warp_pixel(&k, &PoseSE3::identity(), 0.0, &p),
            Err(Error::InvalidDepth(_))
        ));
        assert!(matches!(
            warp_pixel(&k, &PoseSE3::identity(), -1.0, &p),
            Err(Error::InvalidDepth(_))
        ));
    }

    #[test]
    fn identity_jacobian_has_no_depth_dependence() {
        let k = CameraIntrinsics::new(100.0, 100.0, 32.0, 24.0).unwrap();
        let j = warp_jacobian(&k, &PoseSE3::identity(), 3.0, &PixelCoord::new(10.3, 7.7)).unwrap();
        assert!(j.d_depth[0].abs() < 1e-12 && j.d_depth[1].abs() < 1e-12);
    }

    #[test]
    fn translation_derivative_is_inverse_depth() {
        let pose =
            PoseSE3::from_axis_angle(&Vector3::new(0.1, 0.0, 0.05), Vector3::new(0.2, 0.1, 0.3));
        let p = PixelCoord::new(0.2, -0.1);
        let k = CameraIntrinsics::identity();
        let depth = 2.0;
        let w = warp_pixel(&k, &pose, depth, &p).unwrap();
        let j = warp_jacobian(&k, &pose, depth, &p).unwrap();
        assert!((j.d_pose[0][3] - 1.0 / w.projected_depth).abs() < 1e-14);
        assert_eq!(j.d_pose[1][3], 0.0);
    }

    #[test]
    fn identity_synthesis_is_bit_exact() {
        let k = CameraIntrinsics::new(57.3, 61.1, 15.2, 11.9).unwrap();
        let src = ImageBuffer::from_fn(32, 24, 3, |x, y, c| {
            ((x * 7 + y * 13 + c * 5) % 17) as f64 / 16.0
        })
        .unwrap();
        let depth = DepthMap::dense(
            32,
            24,
            (0..32 * 24).map(|i| 1.0 + (i % 29) as f64 * 0.37).collect(),
        )
        .unwrap();
        let v = synthesize_view(&src, &depth, &PoseSE3::identity(), &k).unwrap();
        assert!(v.mask.iter().all(|&m| m));
        assert_eq!(v.image, src);
    }

    #[test]
    fn synthesis_shape_mismatch() {
        let src = ImageBuffer::filled(4, 4, 1, 0.5).unwrap();
        let depth = DepthMap::constant(4, 3, 1.0).unwrap();
        assert!(matches!(
            synthesize_view(
                &src,
                &depth,
                &PoseSE3::identity(),
                &CameraIntrinsics::identity()
            ),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn moving_away_invalidates_most_pixels() {
        let k = CameraIntrinsics::new(20.0, 20.0, 7.5, 7.5).unwrap();
        let src = ImageBuffer::filled(16, 16, 1, 0.5).unwrap();
        let depth = DepthMap::constant(16, 16, 2.0).unwrap();
        let pose = PoseSE3::new(Matrix3::identity(), Vector3::new(50.0, 0.0, -10.0)).unwrap();
        let v = synthesize_view(&src, &depth, &pose, &k).unwrap();
        let valid = v.mask.iter().filter(|&&m| m).count();
        assert!(valid * 10 < v.mask.len());
    }

    #[test]
    fn upsample_same_size_and_constant() {
        let d = DepthMap::dense(3, 2, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        assert_eq!(upsample_depth(&d, 3, 2).unwrap(), d);
        let c = DepthMap::constant(5, 4, 2.5).unwrap();
        let up = upsample_depth(&c, 10, 8).unwrap();
        assert!(up.values().iter().all(|v| (v - 2.5).abs() < 1e-15));
        assert!(matches!(upsample_depth(&c, 4, 4), Err(Error::Shape(_))));
    }

    #[test]
    fn upsample_linear_ramp() {
        // d(x) = 1 + x at coarse pixel centres; fine pixel x sits at coarse
        // coordinate (x + 0.5) / 2 - 0.5, so away from the clamped border
        // the result is 1 + (x + 0.5) / 2 - 0.5.
        let coarse =
            DepthMap::dense(6, 4, (0..24).map(|i| 1.0 + (i % 6) as f64).collect()).unwrap();
        let up = upsample_depth(&coarse, 12, 8).unwrap();
        for y in 0..8 {
            for x in 1..11 {
                let want = 1.0 + (x as f64 + 0.5) / 2.0 - 0.5;
                assert!((up.get(x, y).unwrap() - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn upsample_mask_is_conservative() {
        let mut valid = vec![true; 16];
        valid[5] = false;
        let d = DepthMap::new(4, 4, vec![1.0; 16], valid).unwrap();
        let up = upsample_depth(&d, 8, 8).unwrap();
        // Fine pixels around coarse (1,1) depend on it.
        assert!(up.get(2, 2).is_none() && up.get(3, 3).is_none());
        assert!(up.get(7, 7).is_some());
    }

    #[test]
    fn normalize_inverse_depth_cases() {
        let c = InverseDepthMap::constant(3, 3, 4.0).unwrap();
        assert!(normalize_inverse_depth(&c)
            .unwrap()
            .values()
            .iter()
            .all(|v| *v == 1.0));
        let m = InverseDepthMap::dense(2, 1, vec![1.0, 3.0]).unwrap();
        assert_eq!(normalize_inverse_depth(&m).unwrap().values(), &[0.5, 1.5]);
        let once =
            normalize_inverse_depth(&InverseDepthMap::dense(3, 1, vec![0.2, 0.7, 1.9]).unwrap())
                .unwrap();
        let twice = normalize_inverse_depth(&once).unwrap();
        for (a, b) in once.values().iter().zip(twice.values()) {
            assert!((a - b).abs() < 1e-12);
        }
        let empty = InverseDepthMap::new(1, 1, vec![1.0], vec![false]).unwrap();
        assert!(matches!(
            normalize_inverse_depth(&empty),
            Err(Error::EmptyInput(_))
        ));
    }
}
