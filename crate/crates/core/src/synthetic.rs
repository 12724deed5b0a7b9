//! Ray-cast two-view scenes with exact depth, poses and correspondences.
//!
//! Camera poses passed to this module map world points into the camera
//! frame, `X_c = R X_w + t`. With the first camera at the identity, the
//! second camera's pose is also the relative pose used everywhere else.

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{CameraIntrinsics, Correspondence, NormalizedCoord, PoseSE3};
use crate::par;
use crate::raster::{DepthMap, ImageBuffer};
use crate::warp::WarpField;

/// Ray parameters below this are treated as self-intersections.
const MIN_HIT: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Sinusoid {
    pub amplitude: f64,
    /// Cycles per world unit along the surface's (u, v) axes.
    pub frequency: [f64; 2],
    pub phase: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolidSinusoid {
    pub amplitude: f64,
    /// Cycles per world unit along x, y and z.
    pub frequency: [f64; 3],
    pub phase: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Texture {
    Sinusoids {
        base: f64,
        components: Vec<Sinusoid>,
    },
    /// Sinusoids of the hit point in world (or object rest) coordinates, so
    /// surfaces sharing it meet without an intensity edge.
    Solid {
        base: f64,
        components: Vec<SolidSinusoid>,
    },
    /// Checkerboard with `tanh` edges; `smoothing` is the edge width
    /// relative to the cell size.
    Checker {
        period: f64,
        smoothing: f64,
        low: f64,
        high: f64,
    },
}

impl Texture {
    /// Intensity at surface coordinates `(u, v)` and 3-D point `p`.
    pub fn eval(&self, u: f64, v: f64, p: &Vector3<f64>, channel: usize) -> f64 {
        let shift = 1.3 * channel as f64;
        let value = match self {
            Texture::Sinusoids { base, components } => {
                base + components
                    .iter()
                    .map(|s| {
                        let arg = std::f64::consts::TAU * (s.frequency[0] * u + s.frequency[1] * v)
                            + s.phase
                            + shift;
                        s.amplitude * arg.sin()
                    })
                    .sum::<f64>()
            }
            Texture::Solid { base, components } => {
                base + components
                    .iter()
                    .map(|s| {
                        let arg = std::f64::consts::TAU * Vector3::from(s.frequency).dot(p) + s.phase + shift;
                        s.amplitude * arg.sin()
                    })
                    .sum::<f64>()
            }
            Texture::Checker {
                period,
                smoothing,
                low,
                high,
            } => {
                let a = (std::f64::consts::PI * u / period).sin()
                    * (std::f64::consts::PI * v / period).sin();
                let s = (a / smoothing.max(1e-6)).tanh();
                low + (high - low) * 0.5 * (1.0 + s) * (1.0 - 0.1 * channel as f64)
            }
        };
        value.clamp(0.0, 1.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Primitive {
    /// Plane through `point` with unit `normal`; texture axes `u_axis` and
    /// `normal x u_axis`. `half_extent` bounds it along those axes.
    Plane {
        point: [f64; 3],
        normal: [f64; 3],
        u_axis: [f64; 3],
        half_extent: Option<[f64; 2]>,
        texture: Texture,
    },
    /// Axis-aligned box.
    Box {
        center: [f64; 3],
        half_size: [f64; 3],
        texture: Texture,
    },
}

#[derive(Debug, Clone, Copy)]
struct Hit {
    s: f64,
    u: f64,
    v: f64,
}

impl Primitive {
    fn texture(&self) -> &Texture {
        match self {
            Primitive::Plane { texture, .. } | Primitive::Box { texture, .. } => texture,
        }
    }

    fn intersect(&self, o: &Vector3<f64>, d: &Vector3<f64>) -> Option<Hit> {
        match self {
            Primitive::Plane {
                point,
                normal,
                u_axis,
                half_extent,
                ..
            } => {
                let n = Vector3::from(*normal).normalize();
                let denom = n.dot(d);
                if denom.abs() < 1e-15 {
                    return None;
                }
                let p0 = Vector3::from(*point);
                let s = n.dot(&(p0 - o)) / denom;
                if s <= MIN_HIT {
                    return None;
                }
                let ua = Vector3::from(*u_axis);
                let ua = (ua - n * n.dot(&ua)).normalize();
                let va = n.cross(&ua);
                let rel = o + d * s - p0;
                let (u, v) = (rel.dot(&ua), rel.dot(&va));
                if let Some([hu, hv]) = half_extent {
                    if u.abs() > *hu || v.abs() > *hv {
                        return None;
                    }
                }
                Some(Hit { s, u, v })
            }
            Primitive::Box {
                center, half_size, ..
            } => {
                let c = Vector3::from(*center);
                let h = Vector3::from(*half_size);
                let (mut t0, mut t1) = (f64::NEG_INFINITY, f64::INFINITY);
                for a in 0..3 {
                    if d[a].abs() < 1e-15 {
                        if (o[a] - c[a]).abs() > h[a] {
                            return None;
                        }
                        continue;
                    }
                    let ta = (c[a] - h[a] - o[a]) / d[a];
                    let tb = (c[a] + h[a] - o[a]) / d[a];
                    t0 = t0.max(ta.min(tb));
                    t1 = t1.min(ta.max(tb));
                }
                if t0 > t1 {
                    return None;
                }
                let s = if t0 > MIN_HIT {
                    t0
                } else if t1 > MIN_HIT {
                    t1
                } else {
                    return None;
                };
                let q = o + d * s - c;
                // The face is the axis with the largest relative offset.
                let face = (0..3)
                    .max_by(|&i, &j| (q[i] / h[i]).abs().total_cmp(&(q[j] / h[j]).abs()))
                    .unwrap_or(2);
                let (ia, ib) = ((face + 1) % 3, (face + 2) % 3);
                Some(Hit {
                    s,
                    u: q[ia] + 10.0 * face as f64,
                    v: q[ib],
                })
            }
        }
    }
}

/// Serializable rigid motion: axis-angle rotation and translation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PoseSpec {
    pub rotation: [f64; 3],
    pub translation: [f64; 3],
}

impl PoseSpec {
    pub fn to_pose(&self) -> PoseSE3 {
        PoseSE3::from_axis_angle(
            &Vector3::from(self.rotation),
            Vector3::from(self.translation),
        )
    }

    pub fn from_pose(p: &PoseSE3) -> Self {
        Self {
            rotation: crate::geometry::so3_log(&p.rotation).into(),
            translation: p.translation.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MovingObject {
    pub primitive: Primitive,
    /// World-frame motion of the object between the first and second view.
    pub motion: PoseSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub width: usize,
    pub height: usize,
    pub intrinsics: CameraIntrinsics,
    #[serde(default = "default_channels")]
    pub channels: usize,
    #[serde(default)]
    pub background: f64,
    pub primitives: Vec<Primitive>,
    #[serde(default)]
    pub moving_object: Option<MovingObject>,
}

fn default_channels() -> usize {
    1
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        if self.primitives.is_empty() && self.moving_object.is_none() {
            return Err(Error::EmptyScene);
        }
        if self.width == 0 || self.height == 0 {
            return Err(Error::Shape("scene image size must be positive".into()));
        }
        if self.channels != 1 && self.channels != 3 {
            return Err(Error::InvalidInput(format!(
                "channels must be 1 or 3, got {}",
                self.channels
            )));
        }
        self.intrinsics.validate()?;
        if !(0.0..=1.0).contains(&self.background) {
            return Err(Error::InvalidInput("background must lie in [0, 1]".into()));
        }
        Ok(())
    }
}

/// What the ray through one pixel hits first.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SurfaceHit {
    /// z-depth in the rendering camera.
    pub depth: f64,
    /// Hit point in world coordinates, with the moving object at rest.
    pub world_rest: Vector3<f64>,
    pub moving: bool,
}

#[derive(Debug, Clone)]
pub struct RenderedView {
    pub image: ImageBuffer,
    pub depth: DepthMap,
    /// Pixels whose first hit is the moving object.
    pub moving_mask: Vec<bool>,
    pub hits: Vec<Option<SurfaceHit>>,
}

/// First hit along the ray through pixel `(x, y)`.
fn cast(
    scene: &SceneSpec,
    camera: &PoseSE3,
    object_displaced: bool,
    x: f64,
    y: f64,
) -> Option<(SurfaceHit, f64, f64, Option<usize>)> {
    let dc = scene.intrinsics.unproject(x, y);
    let rt = camera.rotation.transpose();
    let o = -(rt * camera.translation);
    let d = rt * dc;
    let mut best: Option<(Hit, Option<usize>, Vector3<f64>)> = None;
    for (i, p) in scene.primitives.iter().enumerate() {
        if let Some(h) = p.intersect(&o, &d) {
            if best.as_ref().is_none_or(|b| h.s < b.0.s) {
                best = Some((h, Some(i), o + d * h.s));
            }
        }
    }
    if let Some(m) = &scene.moving_object {
        let motion = if object_displaced {
            m.motion.to_pose()
        } else {
            PoseSE3::identity()
        };
        let inv = motion.inverse();
        // Intersect in the object's rest frame; the ray parameter is shared.
        let (ro, rd) = (inv.transform(&o), inv.rotation * d);
        if let Some(h) = m.primitive.intersect(&ro, &rd) {
            if best.as_ref().is_none_or(|b| h.s < b.0.s) {
                best = Some((h, None, ro + rd * h.s));
            }
        }
    }
    let (h, idx, rest) = best?;
    Some((
        SurfaceHit {
            depth: h.s,
            world_rest: rest,
            moving: idx.is_none(),
        },
        h.u,
        h.v,
        idx,
    ))
}

fn render_impl(
    scene: &SceneSpec,
    camera: &PoseSE3,
    object_displaced: bool,
) -> Result<RenderedView> {
    scene.validate()?;
    let (w, h, ch) = (scene.width, scene.height, scene.channels);
    let px = par::map_range(w * h, |i| {
        cast(
            scene,
            camera,
            object_displaced,
            (i % w) as f64,
            (i / w) as f64,
        )
    });
    let mut data = Vec::with_capacity(w * h * ch);
    let mut depth = vec![0.0; w * h];
    let mut valid = vec![false; w * h];
    let mut moving = vec![false; w * h];
    let mut hits = Vec::with_capacity(w * h);
    for (i, p) in px.into_iter().enumerate() {
        match p {
            Some((hit, u, v, idx)) => {
                let tex = match idx {
                    Some(k) => scene.primitives[k].texture(),
                    None => scene
                        .moving_object
                        .as_ref()
                        .map(|m| m.primitive.texture())
                        .ok_or(Error::EmptyScene)?,
                };
                data.extend((0..ch).map(|c| tex.eval(u, v, &hit.world_rest, c)));
                depth[i] = hit.depth;
                valid[i] = true;
                moving[i] = hit.moving;
                hits.push(Some(hit));
            }
            None => {
                data.extend(std::iter::repeat_n(scene.background, ch));
                hits.push(None);
            }
        }
    }
    Ok(RenderedView {
        image: ImageBuffer::new(w, h, ch, data)?,
        depth: DepthMap::new(w, h, depth, valid)?,
        moving_mask: moving,
        hits,
    })
}

/// Renders the scene with any moving object at rest.
pub fn render(scene: &SceneSpec, camera_pose: &PoseSE3) -> Result<(ImageBuffer, DepthMap)> {
    let v = render_impl(scene, camera_pose, false)?;
    Ok((v.image, v.depth))
}

/// Renders one view; `object_displaced` applies the moving object's motion.
pub fn render_view(
    scene: &SceneSpec,
    camera_pose: &PoseSE3,
    object_displaced: bool,
) -> Result<RenderedView> {
    render_impl(scene, camera_pose, object_displaced)
}

/// Returns a copy of `scene` with `object` moving by `object_motion`
/// (world frame) between the first and the second view.
pub fn inject_moving_object(
    scene: &SceneSpec,
    object: Primitive,
    object_motion: &PoseSE3,
) -> SceneSpec {
    let mut s = scene.clone();
    s.moving_object = Some(MovingObject {
        primitive: object,
        motion: PoseSpec::from_pose(object_motion),
    });
    s
}

/// A rendered target/source pair. The target camera sits at the world
/// origin, so `pose` is both the source camera pose and the relative pose.
#[derive(Debug, Clone)]
pub struct RenderedPair {
    pub target: RenderedView,
    pub source: RenderedView,
    pub pose: PoseSE3,
}

pub fn render_pair(scene: &SceneSpec, pose: &PoseSE3) -> Result<RenderedPair> {
    Ok(RenderedPair {
        target: render_view(scene, &PoseSE3::identity(), false)?,
        source: render_view(scene, pose, true)?,
        pose: *pose,
    })
}

/// True target-to-source flow, including the moving object's own motion.
/// Pixels that hit nothing or leave the source image are invalid;
/// occlusion in the source is not checked.
pub fn ground_truth_warp(
    scene: &SceneSpec,
    target_pose: &PoseSE3,
    source_pose: &PoseSE3,
) -> Result<(WarpField, Vec<bool>)> {
    let view = render_view(scene, target_pose, false)?;
    let (w, h) = (scene.width, scene.height);
    let motion = scene
        .moving_object
        .as_ref()
        .map(|m| m.motion.to_pose())
        .unwrap_or_else(PoseSE3::identity);
    let out = par::map_range(w * h, |i| {
        let Some(hit) = view.hits[i] else {
            return ([f64::NAN, f64::NAN], false);
        };
        let xw = if hit.moving {
            motion.transform(&hit.world_rest)
        } else {
            hit.world_rest
        };
        let xs = source_pose.transform(&xw);
        if xs.z <= crate::warp::MIN_PROJECTED_DEPTH {
            return ([f64::NAN, f64::NAN], false);
        }
        match scene.intrinsics.project(&xs) {
            Some(c) => {
                let inside =
                    c[0] >= 0.0 && c[1] >= 0.0 && c[0] <= (w - 1) as f64 && c[1] <= (h - 1) as f64;
                (c, inside)
            }
            None => ([f64::NAN, f64::NAN], false),
        }
    });
    let (coords, valid) = out.into_iter().unzip();
    Ok((
        WarpField {
            width: w,
            height: h,
            coords,
            valid,
        },
        view.moving_mask,
    ))
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticMatches {
    pub matches: Vec<Correspondence>,
    /// False for the injected uniform-random outliers.
    pub inlier: Vec<bool>,
}

/// Samples `n` matches of static scene points visible in both views, adds
/// Gaussian pixel noise and replaces `⌊outlier_frac · n⌋` of them with
/// uniformly random matches.
pub fn exact_correspondences(
    scene: &SceneSpec,
    pose1: &PoseSE3,
    pose2: &PoseSE3,
    n: usize,
    noise_px: f64,
    outlier_frac: f64,
    seed: u64,
) -> Result<SyntheticMatches> {
    scene.validate()?;
    if n < 5 {
        return Err(Error::InsufficientData { needed: 5, got: n });
    }
    if !(0.0..=1.0).contains(&outlier_frac) || !(noise_px >= 0.0 && noise_px.is_finite()) {
        return Err(Error::InvalidInput(
            "need 0 <= outlier_frac <= 1 and noise_px >= 0".into(),
        ));
    }
    let (w, h) = (scene.width as f64, scene.height as f64);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pts = Vec::with_capacity(n);
    let max_attempts = 200 * n;
    let mut attempts = 0;
    while pts.len() < n {
        attempts += 1;
        if attempts > max_attempts {
            return Err(Error::Visibility(format!(
                "found only {} of {n} co-visible static points",
                pts.len()
            )));
        }
        let (x, y) = (
            rng.random_range(0.0..w - 1.0),
            rng.random_range(0.0..h - 1.0),
        );
        let Some((hit, ..)) = cast(scene, pose1, false, x, y) else {
            continue;
        };
        if hit.moving {
            continue;
        }
        let xs = pose2.transform(&hit.world_rest);
        if xs.z <= 1e-6 {
            continue;
        }
        let Some([u, v]) = scene.intrinsics.project(&xs) else {
            continue;
        };
        if u < 0.0 || v < 0.0 || u > w - 1.0 || v > h - 1.0 {
            continue;
        }
        // Visible in view 2 only if nothing lies in front of it.
        match cast(scene, pose2, true, u, v) {
            Some((h2, ..)) if (h2.depth - xs.z).abs() <= 1e-6 * xs.z.max(1.0) => {}
            _ => continue,
        }
        pts.push([x, y, u, v]);
    }
    let normal = Normal::new(0.0, noise_px.max(f64::MIN_POSITIVE))
        .map_err(|e| Error::InvalidInput(format!("noise: {e}")))?;
    if noise_px > 0.0 {
        for p in &mut pts {
            for c in p.iter_mut() {
                *c += normal.sample(&mut rng);
            }
        }
    }
    let n_out = (outlier_frac * n as f64).floor() as usize;
    let mut inlier = vec![true; n];
    for i in rand::seq::index::sample(&mut rng, n, n_out).iter() {
        inlier[i] = false;
        pts[i][2] = rng.random_range(0.0..w - 1.0);
        pts[i][3] = rng.random_range(0.0..h - 1.0);
    }
    let matches = pts
        .iter()
        .map(|p| Correspondence::new(p[0], p[1], p[2], p[3]))
        .collect::<Result<Vec<_>>>()?;
    Ok(SyntheticMatches { matches, inlier })
}

/// A random rigid motion with rotation angle up to `max_angle` (radians)
/// about a random axis and a translation of length `baseline` in a random
/// direction.
pub fn random_pose<R: Rng>(rng: &mut R, max_angle: f64, baseline: f64) -> PoseSE3 {
    let axis = random_unit(rng);
    let angle = rng.random_range(0.0..=max_angle);
    PoseSE3::from_axis_angle(&(axis * angle), random_unit(rng) * baseline)
}

fn random_unit<R: Rng>(rng: &mut R) -> Vector3<f64> {
    let n = Normal::new(0.0, 1.0).expect("unit normal");
    loop {
        let v = Vector3::new(n.sample(rng), n.sample(rng), n.sample(rng));
        if v.norm() > 1e-6 {
            return v.normalize();
        }
    }
}

/// `n` random points in front of both cameras, returned as exact
/// normalized correspondences `(view 1, view 2)` under `pose`.
pub fn random_point_pairs<R: Rng>(
    rng: &mut R,
    pose: &PoseSE3,
    n: usize,
) -> Vec<(NormalizedCoord, NormalizedCoord)> {
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let x = Vector3::new(
            rng.random_range(-2.0..2.0),
            rng.random_range(-2.0..2.0),
            rng.random_range(2.0..8.0),
        );
        let x2 = pose.transform(&x);
        if x2.z < 0.5 {
            continue;
        }
        if let (Ok(a), Ok(b)) = (
            NormalizedCoord::from_point(&x),
            NormalizedCoord::from_point(&x2),
        ) {
            out.push((a, b));
        }
    }
    out
}

fn random_texture<R: Rng>(rng: &mut R, max_frequency: f64) -> Texture {
    let components = (0..4)
        .map(|_| {
            let f = rng.random_range(0.3 * max_frequency..max_frequency);
            let dir = random_unit(rng);
            SolidSinusoid {
                amplitude: rng.random_range(0.05..0.1),
                frequency: (dir * f).into(),
                phase: rng.random_range(0.0..std::f64::consts::TAU),
            }
        })
        .collect();
    Texture::Solid {
        base: 0.5,
        components,
    }
}

/// A back wall and a ground plane sharing one band-limited solid texture.
/// `max_frequency` is in cycles per world unit.
pub fn static_scene(width: usize, height: usize, max_frequency: f64, seed: u64) -> SceneSpec {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let f = 0.8 * width as f64;
    let intrinsics = CameraIntrinsics::new(
        f,
        f,
        (width as f64 - 1.0) / 2.0,
        (height as f64 - 1.0) / 2.0,
    )
    .expect("positive focal length");
    // One solid texture for both planes keeps the image continuous where
    // they meet.
    let texture = random_texture(&mut rng, max_frequency);
    let tilt = rng.random_range(-0.15..0.15);
    let wall_normal =
        nalgebra::Rotation3::from_euler_angles(0.0, tilt, 0.0) * Vector3::new(0.0, 0.0, -1.0);
    let wall = Primitive::Plane {
        point: [0.0, 0.0, rng.random_range(7.0..9.0)],
        normal: wall_normal.into(),
        u_axis: [1.0, 0.0, 0.0],
        half_extent: None,
        texture: texture.clone(),
    };
    let ground = Primitive::Plane {
        point: [0.0, rng.random_range(1.2..1.6), 0.0],
        normal: [0.0, -1.0, 0.0],
        u_axis: [1.0, 0.0, 0.0],
        half_extent: None,
        texture,
    };
    SceneSpec {
        width,
        height,
        intrinsics,
        channels: 1,
        background: 0.5,
        primitives: vec![wall, ground],
        moving_object: None,
    }
}

/// A box with a random solid texture, roughly `distance` in front of the
/// camera, whose image covers about `coverage` of the frame.
pub fn box_object<R: Rng>(
    rng: &mut R,
    scene: &SceneSpec,
    distance: f64,
    coverage: f64,
    max_frequency: f64,
) -> Primitive {
    let k = &scene.intrinsics;
    let area_px = coverage * (scene.width * scene.height) as f64;
    let side_px = area_px.sqrt();
    let half = 0.5 * side_px * distance / k.fx;
    let cx = rng.random_range(-0.15..0.15) * scene.width as f64 * distance / k.fx;
    Primitive::Box {
        center: [cx, rng.random_range(-0.1..0.1) * distance, distance + half],
        half_size: [half, half, half],
        texture: random_texture(rng, max_frequency),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{epipolar_residual, essential_from_pose};

    fn plane_scene(normal: [f64; 3], z: f64) -> SceneSpec {
        SceneSpec {
            width: 16,
            height: 12,
            intrinsics: CameraIntrinsics::new(20.0, 20.0, 7.5, 5.5).unwrap(),
            channels: 1,
            background: 0.0,
            primitives: vec![Primitive::Plane {
                point: [0.0, 0.0, z],
                normal,
                u_axis: [1.0, 0.0, 0.0],
                half_extent: None,
                texture: Texture::Sinusoids {
                    base: 0.5,
                    components: vec![Sinusoid {
                        amplitude: 0.2,
                        frequency: [0.3, 0.1],
                        phase: 0.0,
                    }],
                },
            }],
            moving_object: None,
        }
    }

    #[test]
    fn fronto_parallel_plane_has_constant_depth() {
        let (_, d) = render(&plane_scene([0.0, 0.0, -1.0], 5.0), &PoseSE3::identity()).unwrap();
        assert_eq!(d.valid_count(), 16 * 12);
        assert!(d.values().iter().all(|v| (v - 5.0).abs() < 1e-12));
    }

    #[test]
    fn tilted_plane_depth_is_linear_in_y() {
        // Plane n·X = n·(0,0,5) with n ∝ (0, 0.2, -1); closed form
        // z = 5 / (1 - 0.2 * v) with v = (y - cy) / fy.
        let n = Vector3::new(0.0, 0.2, -1.0).normalize();
        let scene = plane_scene(n.into(), 5.0);
        let (_, d) = render(&scene, &PoseSE3::identity()).unwrap();
        for y in 0..12 {
            let v = (y as f64 - 5.5) / 20.0;
            let want = 5.0 / (1.0 - 0.2 * v);
            for x in 0..16 {
                assert!((d.get(x, y).unwrap() - want).abs() < 1e-12);
            }
            // Inverse depth is affine in y.
        }
    }

    #[test]
    fn camera_behind_plane_sees_nothing() {
        let scene = plane_scene([0.0, 0.0, -1.0], -5.0);
        let (_, d) = render(&scene, &PoseSE3::identity()).unwrap();
        assert_eq!(d.valid_count(), 0);
    }

    #[test]
    fn empty_scene_is_an_error() {
        let mut s = plane_scene([0.0, 0.0, -1.0], 5.0);
        s.primitives.clear();
        assert!(matches!(
            render(&s, &PoseSE3::identity()),
            Err(Error::EmptyScene)
        ));
    }

    #[test]
    fn exact_matches_satisfy_epipolar_constraint() {
        let scene = static_scene(64, 48, 0.5, 3);
        let pose =
            PoseSE3::from_axis_angle(&Vector3::new(0.0, 0.02, 0.0), Vector3::new(0.3, 0.0, 0.05));
        let m =
            exact_correspondences(&scene, &PoseSE3::identity(), &pose, 50, 0.0, 0.0, 9).unwrap();
        let e = essential_from_pose(&pose).unwrap();
        for c in &m.matches {
            let (a, b) = c.normalized(&scene.intrinsics, &scene.intrinsics).unwrap();
            assert!(epipolar_residual(&e, &a, &b) < 1e-10);
        }
        let m =
            exact_correspondences(&scene, &PoseSE3::identity(), &pose, 50, 0.0, 0.3, 9).unwrap();
        assert_eq!(m.inlier.iter().filter(|b| !**b).count(), 15);
    }

    #[test]
    fn moving_points_are_never_sampled() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let scene = static_scene(64, 48, 0.5, 4);
        let obj = box_object(&mut rng, &scene, 4.0, 0.3, 0.5);
        let motion = PoseSE3::from_axis_angle(&Vector3::zeros(), Vector3::new(0.5, 0.0, 0.0));
        let scene = inject_moving_object(&scene, obj, &motion);
        let pose = PoseSE3::from_axis_angle(&Vector3::zeros(), Vector3::new(0.2, 0.0, 0.0));
        let view = render_view(&scene, &PoseSE3::identity(), false).unwrap();
        assert!(view.moving_mask.iter().any(|&m| m));
        // Object points would break the camera-only epipolar constraint.
        let m =
            exact_correspondences(&scene, &PoseSE3::identity(), &pose, 100, 0.0, 0.0, 2).unwrap();
        let e = essential_from_pose(&pose).unwrap();
        assert!(m.matches.iter().all(|c| {
            let (a, b) = c.normalized(&scene.intrinsics, &scene.intrinsics).unwrap();
            epipolar_residual(&e, &a, &b) < 1e-10
        }));
    }

    #[test]
    fn zero_motion_object_matches_static_render() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let base = static_scene(32, 24, 0.5, 6);
        let obj = box_object(&mut rng, &base, 4.0, 0.2, 0.5);
        let mut with_rest = base.clone();
        with_rest.primitives.push(obj.clone());
        let moving = inject_moving_object(&base, obj, &PoseSE3::identity());
        let pose = PoseSE3::from_axis_angle(&Vector3::zeros(), Vector3::new(0.2, 0.0, 0.0));
        let a = render_view(&with_rest, &pose, true).unwrap();
        let b = render_view(&moving, &pose, true).unwrap();
        assert_eq!(a.image, b.image);
        assert_eq!(a.depth, b.depth);
    }

    #[test]
    fn occluded_object_has_empty_mask() {
        let base = static_scene(32, 24, 0.5, 6);
        let hidden = Primitive::Box {
            center: [0.0, 0.0, 50.0],
            half_size: [0.5, 0.5, 0.5],
            texture: Texture::Sinusoids {
                base: 0.5,
                components: vec![],
            },
        };
        let s = inject_moving_object(&base, hidden, &PoseSE3::identity());
        let v = render_view(&s, &PoseSE3::identity(), false).unwrap();
        assert!(v.moving_mask.iter().all(|m| !m));
    }

    #[test]
    fn rendering_is_deterministic() {
        let a = static_scene(32, 24, 0.5, 11);
        let b = static_scene(32, 24, 0.5, 11);
        assert_eq!(a, b);
        assert_eq!(
            render(&a, &PoseSE3::identity()).unwrap().0,
            render(&b, &PoseSE3::identity()).unwrap().0
        );
    }
}
