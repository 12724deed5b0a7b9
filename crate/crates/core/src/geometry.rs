//! Calibrated two-view geometry: intrinsics, rigid poses, normalized
//! coordinates and the essential matrix.
//!
//! Poses map points from the first (target) camera frame into the second
//! (source) frame, `X2 = R * X1 + t`. With that convention the essential
//! matrix is `E = [t]x R` and corresponding normalized coordinates satisfy
//! `p2^T E p1 = 0`.

use nalgebra::{Matrix3, Rotation3, Vector3, SVD};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Homogeneous coordinates whose third entry is smaller than this are
/// treated as points at infinity.
pub const HOMOGENEOUS_EPS: f64 = 1e-12;

/// Maximum pyramid level accepted by [`scale_intrinsics`].
pub const MAX_LEVEL: u32 = 6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    #[serde(default)]
    pub skew: f64,
}

impl CameraIntrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64) -> Result<Self> {
        Self::with_skew(fx, fy, cx, cy, 0.0)
    }

    pub fn with_skew(fx: f64, fy: f64, cx: f64, cy: f64, skew: f64) -> Result<Self> {
        let k = Self {
            fx,
            fy,
            cx,
            cy,
            skew,
        };
        k.validate()?;
        Ok(k)
    }

    /// Builds intrinsics from an upper-triangular calibration matrix.
    pub fn from_matrix(m: &Matrix3<f64>) -> Result<Self> {
        let scale = m[(2, 2)];
        if !scale.is_finite() || scale.abs() < HOMOGENEOUS_EPS {
            return Err(Error::InvalidInput("K[2,2] must be nonzero".into()));
        }
        let m = m / scale;
        let lower = [m[(1, 0)], m[(2, 0)], m[(2, 1)]];
        if lower.iter().any(|v| v.abs() > 1e-12) {
            return Err(Error::InvalidInput(
                "calibration matrix must be upper triangular".into(),
            ));
        }
        Self::with_skew(m[(0, 0)], m[(1, 1)], m[(0, 2)], m[(1, 2)], m[(0, 1)])
    }

    pub fn identity() -> Self {
        Self {
            fx: 1.0,
            fy: 1.0,
            cx: 0.0,
            cy: 0.0,
            skew: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let all = [self.fx, self.fy, self.cx, self.cy, self.skew];
        if all.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("intrinsics must be finite".into()));
        }
        if self.fx <= 0.0 || self.fy <= 0.0 {
            return Err(Error::InvalidInput(format!(
                "focal lengths must be positive (fx={}, fy={})",
                self.fx, self.fy
            )));
        }
        Ok(())
    }

    pub fn matrix(&self) -> Matrix3<f64> {
        Matrix3::new(
            self.fx, self.skew, self.cx, //
            0.0, self.fy, self.cy, //
            0.0, 0.0, 1.0,
        )
    }

    /// Closed-form inverse of the upper-triangular calibration matrix.
    pub fn inverse_matrix(&self) -> Matrix3<f64> {
        let (fx, fy, cx, cy, s) = (self.fx, self.fy, self.cx, self.cy, self.skew);
        Matrix3::new(
            1.0 / fx,
            -s / (fx * fy),
            (s * cy - cx * fy) / (fx * fy),
            0.0,
            1.0 / fy,
            -cy / fy,
            0.0,
            0.0,
            1.0,
        )
    }

    /// Projects a camera-frame point to continuous pixel coordinates.
    pub fn project(&self, x: &Vector3<f64>) -> Option<[f64; 2]> {
        if x.z.abs() < HOMOGENEOUS_EPS {
            return None;
        }
        let u = x.x / x.z;
        let v = x.y / x.z;
        Some([self.fx * u + self.skew * v + self.cx, self.fy * v + self.cy])
    }

    /// Ray direction (with unit z) through a continuous pixel position.
    pub fn unproject(&self, x: f64, y: f64) -> Vector3<f64> {
        let v = (y - self.cy) / self.fy;
        let u = (x - self.cx - self.skew * v) / self.fx;
        Vector3::new(u, v, 1.0)
    }
}

/// Pixel position in homogeneous form, third entry exactly 1.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PixelCoord(Vector3<f64>);

impl PixelCoord {
    pub fn new(x: f64, y: f64) -> Self {
        Self(Vector3::new(x, y, 1.0))
    }

    /// Rescales a homogeneous 3-vector so its third entry is 1.
    pub fn from_homogeneous(h: &Vector3<f64>) -> Result<Self> {
        dehomogenize(h).map(|v| Self(v))
    }

    pub fn x(&self) -> f64 {
        self.0.x
    }

    pub fn y(&self) -> f64 {
        self.0.y
    }

    pub fn as_vector(&self) -> &Vector3<f64> {
        &self.0
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }
}

/// Normalized (calibrated) image coordinate `K^-1 p`, third entry 1.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormalizedCoord(Vector3<f64>);

impl NormalizedCoord {
    pub fn new(x: f64, y: f64) -> Self {
        Self(Vector3::new(x, y, 1.0))
    }

    pub fn from_homogeneous(h: &Vector3<f64>) -> Result<Self> {
        dehomogenize(h).map(|v| Self(v))
    }

    /// Direction of the camera ray through a camera-frame point.
    pub fn from_point(x: &Vector3<f64>) -> Result<Self> {
        Self::from_homogeneous(x)
    }

    pub fn x(&self) -> f64 {
        self.0.x
    }

    pub fn y(&self) -> f64 {
        self.0.y
    }

    pub fn as_vector(&self) -> &Vector3<f64> {
        &self.0
    }
}

/// Divides by the third homogeneous entry. Entries with `|z| < 1e-12` mark
/// the coordinate invalid instead of producing infinities.
pub fn dehomogenize(h: &Vector3<f64>) -> Result<Vector3<f64>> {
    if h.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput(
            "non-finite homogeneous coordinate".into(),
        ));
    }
    if h.z.abs() < HOMOGENEOUS_EPS {
        return Err(Error::InvalidInput(
            "homogeneous coordinate at infinity".into(),
        ));
    }
    Ok(Vector3::new(h.x / h.z, h.y / h.z, 1.0))
}

/// A pair of matched pixels, view 1 then view 2.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Correspondence {
    pub x1: PixelCoord,
    pub x2: PixelCoord,
}

impl Correspondence {
    pub fn new(x1: f64, y1: f64, x2: f64, y2: f64) -> Result<Self> {
        let c = Self {
            x1: PixelCoord::new(x1, y1),
            x2: PixelCoord::new(x2, y2),
        };
        if !c.x1.is_finite() || !c.x2.is_finite() {
            return Err(Error::InvalidInput("non-finite correspondence".into()));
        }
        Ok(c)
    }

    pub fn normalized(
        &self,
        k1: &CameraIntrinsics,
        k2: &CameraIntrinsics,
    ) -> Result<(NormalizedCoord, NormalizedCoord)> {
        Ok((
            normalize_pixel(k1, &self.x1)?,
            normalize_pixel(k2, &self.x2)?,
        ))
    }
}

/// Rigid transform from frame 1 into frame 2.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PoseSE3 {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

const ORTHONORMAL_TOL: f64 = 1e-9;

impl PoseSE3 {
    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self> {
        let p = Self {
            rotation,
            translation,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn from_axis_angle(omega: &Vector3<f64>, translation: Vector3<f64>) -> Self {
        Self {
            rotation: so3_exp(omega),
            translation,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let r = &self.rotation;
        if r.iter()
            .chain(self.translation.iter())
            .any(|v| !v.is_finite())
        {
            return Err(Error::InvalidInput("pose must be finite".into()));
        }
        let orth = (r.transpose() * r - Matrix3::identity()).amax();
        let det = r.determinant();
        if orth > ORTHONORMAL_TOL || (det - 1.0).abs() > ORTHONORMAL_TOL {
            return Err(Error::InvalidInput(format!(
                "rotation not orthonormal (|RtR-I|={orth:e}, det={det})"
            )));
        }
        Ok(())
    }

    pub fn transform(&self, x: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * x + self.translation
    }

    pub fn inverse(&self) -> Self {
        let rt = self.rotation.transpose();
        Self {
            rotation: rt,
            translation: -(rt * self.translation),
        }
    }

    /// `self ∘ other`: applies `other` first.
    pub fn compose(&self, other: &PoseSE3) -> Self {
        Self {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    /// Left update `[Exp(w) | v] ∘ self` with `delta = (w, v)`.
    pub fn perturb_left(&self, delta: &[f64; 6]) -> Self {
        let w = Vector3::new(delta[0], delta[1], delta[2]);
        let v = Vector3::new(delta[3], delta[4], delta[5]);
        let dr = so3_exp(&w);
        Self {
            rotation: dr * self.rotation,
            translation: dr * self.translation + v,
        }
    }

    /// Camera centre of frame 2 expressed in frame 1.
    pub fn center(&self) -> Vector3<f64> {
        -(self.rotation.transpose() * self.translation)
    }

    pub fn rotation_angle_to(&self, other: &PoseSE3) -> f64 {
        so3_log(&(self.rotation * other.rotation.transpose())).norm()
    }

    /// Angle between translation directions in radians.
    pub fn translation_angle_to(&self, other: &PoseSE3) -> Option<f64> {
        angle_between(&self.translation, &other.translation)
    }

    /// 3x4 row-major `[R | t]`.
    pub fn to_row_major(&self) -> [f64; 12] {
        let r = &self.rotation;
        let t = &self.translation;
        [
            r[(0, 0)],
            r[(0, 1)],
            r[(0, 2)],
            t.x,
            r[(1, 0)],
            r[(1, 1)],
            r[(1, 2)],
            t.y,
            r[(2, 0)],
            r[(2, 1)],
            r[(2, 2)],
            t.z,
        ]
    }

    /// Inverse of [`PoseSE3::to_row_major`]. The rotation block is only
    /// checked loosely (1e-6) since text files round it.
    pub fn from_row_major(v: &[f64; 12]) -> Result<Self> {
        let rotation = Matrix3::new(v[0], v[1], v[2], v[4], v[5], v[6], v[8], v[9], v[10]);
        let translation = Vector3::new(v[3], v[7], v[11]);
        if v.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidInput("pose must be finite".into()));
        }
        let orth = (rotation.transpose() * rotation - Matrix3::identity()).amax();
        if orth > 1e-6 || (rotation.determinant() - 1.0).abs() > 1e-6 {
            return Err(Error::InvalidInput(
                "rotation block is not a rotation".into(),
            ));
        }
        Ok(Self {
            rotation,
            translation,
        })
    }
}

pub fn angle_between(a: &Vector3<f64>, b: &Vector3<f64>) -> Option<f64> {
    let na = a.norm();
    let nb = b.norm();
    if na < 1e-300 || nb < 1e-300 {
        return None;
    }
    // atan2 keeps precision near 0 and pi, where acos loses it.
    Some(a.cross(b).norm().atan2(a.dot(b)))
}

pub fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

pub fn so3_exp(omega: &Vector3<f64>) -> Matrix3<f64> {
    Rotation3::new(*omega).into_inner()
}

pub fn so3_log(r: &Matrix3<f64>) -> Vector3<f64> {
    // sin(θ)·axis from the antisymmetric part, cos(θ) from the trace; atan2
    // stays finite when round-off pushes the trace just past 3.
    let v = Vector3::new(
        r[(2, 1)] - r[(1, 2)],
        r[(0, 2)] - r[(2, 0)],
        r[(1, 0)] - r[(0, 1)],
    ) * 0.5;
    let s = v.norm();
    let c = ((r.trace() - 1.0) * 0.5).clamp(-1.0, 1.0);
    let theta = s.atan2(c);
    if theta > std::f64::consts::PI - 1e-6 {
        let near_pi = Rotation3::from_matrix_unchecked(*r).scaled_axis();
        if near_pi.iter().all(|x| x.is_finite()) {
            return near_pi;
        }
    }
    if s < 1e-300 {
        return v;
    }
    v * (theta / s)
}

/// Which normalization an essential matrix carries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Normalization {
    UnitFrobenius,
    Raw,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EssentialMatrix {
    pub e: Matrix3<f64>,
    pub normalization: Normalization,
}

impl EssentialMatrix {
    pub fn raw(e: Matrix3<f64>) -> Self {
        Self {
            e,
            normalization: Normalization::Raw,
        }
    }

    /// Scales `e` to unit Frobenius norm.
    pub fn unit(e: Matrix3<f64>) -> Result<Self> {
        let n = e.norm();
        if !n.is_finite() || n < 1e-300 {
            return Err(Error::InvalidInput(
                "essential matrix has zero or non-finite norm".into(),
            ));
        }
        Ok(Self {
            e: e / n,
            normalization: Normalization::UnitFrobenius,
        })
    }

    pub fn normalized(&self) -> Result<Self> {
        match self.normalization {
            Normalization::UnitFrobenius => Ok(*self),
            Normalization::Raw => Self::unit(self.e),
        }
    }

    pub fn negated(&self) -> Self {
        Self {
            e: -self.e,
            normalization: self.normalization,
        }
    }

    pub fn singular_values(&self) -> Vector3<f64> {
        let mut s = SVD::new(self.e, false, false).singular_values;
        s.as_mut_slice().sort_by(|a, b| b.total_cmp(a));
        s
    }

    /// Frobenius distance to `other` after both are unit-normalized and
    /// their sign ambiguity resolved.
    pub fn distance_up_to_scale(&self, other: &EssentialMatrix) -> f64 {
        let a = self.e / self.e.norm();
        let b = other.e / other.e.norm();
        (a - b).norm().min((a + b).norm())
    }
}

/// `K^-1 p`, rescaled to a unit third entry.
pub fn normalize_pixel(k: &CameraIntrinsics, p: &PixelCoord) -> Result<NormalizedCoord> {
    if !p.is_finite() {
        return Err(Error::InvalidInput("non-finite pixel coordinate".into()));
    }
    NormalizedCoord::from_homogeneous(&(k.inverse_matrix() * p.as_vector()))
}

/// `[t]x R`, unit-Frobenius normalized.
pub fn essential_from_pose(pose: &PoseSE3) -> Result<EssentialMatrix> {
    if pose.translation.norm() <= 1e-12 {
        return Err(Error::DegenerateMotion(
            "pure rotation has no epipolar geometry".into(),
        ));
    }
    EssentialMatrix::unit(skew(&pose.translation) * pose.rotation)
}

/// Algebraic residual `|p2^T E p1|`.
pub fn epipolar_residual(e: &EssentialMatrix, p1: &NormalizedCoord, p2: &NormalizedCoord) -> f64 {
    (p2.as_vector().dot(&(e.e * p1.as_vector()))).abs()
}

/// Epipolar line `E p1` in the second view.
pub fn epipolar_line(e: &EssentialMatrix, p1: &NormalizedCoord) -> Vector3<f64> {
    e.e * p1.as_vector()
}

/// First-order geometric (Sampson) distance, for diagnostics and
/// threshold selection. The weighting itself uses the algebraic residual.
pub fn sampson_distance(e: &EssentialMatrix, p1: &NormalizedCoord, p2: &NormalizedCoord) -> f64 {
    let x1 = p1.as_vector();
    let x2 = p2.as_vector();
    let ex1 = e.e * x1;
    let etx2 = e.e.transpose() * x2;
    let num = x2.dot(&ex1);
    let den = ex1.x * ex1.x + ex1.y * ex1.y + etx2.x * etx2.x + etx2.y * etx2.y;
    if den <= 0.0 {
        return num.abs();
    }
    (num * num / den).sqrt()
}

/// Intrinsics for pyramid level `level` (each level halves resolution).
pub fn scale_intrinsics(k: &CameraIntrinsics, level: u32) -> Result<CameraIntrinsics> {
    if level > MAX_LEVEL {
        return Err(Error::InvalidInput(format!(
            "pyramid level {level} exceeds {MAX_LEVEL}"
        )));
    }
    let s = 0.5f64.powi(level as i32);
    Ok(CameraIntrinsics {
        fx: k.fx * s,
        fy: k.fy * s,
        cx: k.cx * s,
        cy: k.cy * s,
        skew: k.skew * s,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn k_example() -> CameraIntrinsics {
        CameraIntrinsics::new(100.0, 100.0, 208.0, 64.0).unwrap()
    }

    #[test]
    fn principal_point_maps_to_origin() {
        let k = k_example();
        let n = normalize_pixel(&k, &PixelCoord::new(k.cx, k.cy)).unwrap();
        assert_eq!(n.as_vector(), &Vector3::new(0.0, 0.0, 1.0));
    }

    #[test]
    fn identity_intrinsics_leave_pixels_alone() {
        let n = normalize_pixel(&CameraIntrinsics::identity(), &PixelCoord::new(3.0, 4.0)).unwrap();
        assert_eq!(n.as_vector(), &Vector3::new(3.0, 4.0, 1.0));
    }

    #[test]
    fn hand_computed_normalization() {
        let n = normalize_pixel(&k_example(), &PixelCoord::new(308.0, 164.0)).unwrap();
        assert_relative_eq!(n.x(), 1.0, epsilon = 1e-15);
        assert_relative_eq!(n.y(), 1.0, epsilon = 1e-15);
    }

    #[test]
    fn non_finite_pixel_is_rejected() {
        let r = normalize_pixel(&k_example(), &PixelCoord::new(f64::NAN, 1.0));
        assert!(matches!(r, Err(Error::InvalidInput(_))));
    }

    #[test]
    fn near_zero_homogeneous_entry_is_invalid() {
        assert!(dehomogenize(&Vector3::new(1.0, 1.0, 1e-13)).is_err());
        assert!(dehomogenize(&Vector3::new(2.0, 4.0, 2.0)).is_ok());
    }

    #[test]
    fn sideways_translation_essential() {
        let pose = PoseSE3::new(Matrix3::identity(), Vector3::new(1.0, 0.0, 0.0)).unwrap();
        let e = essential_from_pose(&pose).unwrap();
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let expected = Matrix3::new(0.0, 0.0, 0.0, 0.0, 0.0, -s, 0.0, s, 0.0);
        assert!((e.e - expected).amax() < 1e-15);
        assert_eq!(e.normalization, Normalization::UnitFrobenius);
    }

    #[test]
    fn zero_translation_is_degenerate() {
        let r = essential_from_pose(&PoseSE3::identity());
        assert!(matches!(r, Err(Error::DegenerateMotion(_))));
    }

    #[test]
    fn sideways_epipolar_line_is_horizontal() {
        let pose = PoseSE3::new(Matrix3::identity(), Vector3::new(1.0, 0.0, 0.0)).unwrap();
        let e = essential_from_pose(&pose).unwrap();
        let l = epipolar_line(&e, &NormalizedCoord::new(0.0, 0.0));
        let dir = l / l.norm();
        assert!((dir - Vector3::new(0.0, -1.0, 0.0)).norm() < 1e-15);
        // Scaling E leaves the line unchanged up to scale.
        let l2 = epipolar_line(
            &EssentialMatrix::raw(e.e * 3.5),
            &NormalizedCoord::new(0.0, 0.0),
        );
        assert!(l.cross(&l2).norm() < 1e-12);
    }

    #[test]
    fn residual_is_incidence_with_line() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let pose =
            PoseSE3::from_axis_angle(&Vector3::new(0.1, -0.2, 0.05), Vector3::new(0.3, 0.1, 1.0));
        let e = essential_from_pose(&pose).unwrap();
        for _ in 0..50 {
            let p1 = NormalizedCoord::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
            let p2 = NormalizedCoord::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
            let via_line = p2.as_vector().dot(&epipolar_line(&e, &p1)).abs();
            assert_eq!(epipolar_residual(&e, &p1, &p2), via_line);
            // Any point on the line has zero residual.
            let l = epipolar_line(&e, &p1);
            let x = rng.random_range(-1.0..1.0);
            let on_line = NormalizedCoord::new(x, -(l.x * x + l.z) / l.y);
            assert!(epipolar_residual(&e, &p1, &on_line) < 1e-14);
            let off = NormalizedCoord::new(on_line.x(), on_line.y() + 0.01);
            assert!(epipolar_residual(&e, &p1, &off) > 0.0);
        }
    }

    #[test]
    fn scale_intrinsics_levels() {
        let k = k_example();
        assert_eq!(scale_intrinsics(&k, 0).unwrap(), k);
        assert_eq!(scale_intrinsics(&k, 1).unwrap().fx, 50.0);
        let twice = scale_intrinsics(&scale_intrinsics(&k, 1).unwrap(), 1).unwrap();
        assert_eq!(twice, scale_intrinsics(&k, 2).unwrap());
        assert!(scale_intrinsics(&k, 7).is_err());
    }

    #[test]
    fn inverse_matrix_matches_numeric_inverse() {
        let k = CameraIntrinsics::with_skew(310.0, 290.0, 160.0, 120.0, 1.5).unwrap();
        let inv = k.matrix().try_inverse().unwrap();
        assert!((inv - k.inverse_matrix()).amax() < 1e-15);
        assert_eq!(CameraIntrinsics::from_matrix(&k.matrix()).unwrap(), k);
    }

    #[test]
    fn invalid_intrinsics_rejected() {
        assert!(CameraIntrinsics::new(0.0, 1.0, 0.0, 0.0).is_err());
        assert!(CameraIntrinsics::new(1.0, -1.0, 0.0, 0.0).is_err());
        assert!(CameraIntrinsics::new(1.0, 1.0, f64::INFINITY, 0.0).is_err());
    }

    #[test]
    fn perturb_left_matches_composition() {
        let pose =
            PoseSE3::from_axis_angle(&Vector3::new(0.2, 0.1, -0.3), Vector3::new(1.0, 2.0, 3.0));
        let d = [0.01, -0.02, 0.03, 0.1, 0.2, -0.1];
        let left = PoseSE3::from_axis_angle(
            &Vector3::new(d[0], d[1], d[2]),
            Vector3::new(d[3], d[4], d[5]),
        );
        let a = pose.perturb_left(&d);
        let b = left.compose(&pose);
        assert!((a.rotation - b.rotation).amax() < 1e-15);
        assert!((a.translation - b.translation).amax() < 1e-15);
        a.validate().unwrap();
    }

    #[test]
    fn row_major_roundtrip() {
        let pose =
            PoseSE3::from_axis_angle(&Vector3::new(0.2, 0.1, -0.3), Vector3::new(1.0, 2.0, 3.0));
        let back = PoseSE3::from_row_major(&pose.to_row_major()).unwrap();
        assert_eq!(back, pose);
    }

    #[test]
    fn angle_between_hand_cases() {
        let x = Vector3::new(1.0, 0.0, 0.0);
        assert_eq!(angle_between(&x, &(x * 3.0)).unwrap(), 0.0);
        assert_eq!(angle_between(&x, &-x).unwrap(), std::f64::consts::PI);
        assert!(angle_between(&x, &Vector3::zeros()).is_none());
    }
}
