use nalgebra::{Matrix3, SMatrix, SVD, Vector3};
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::minimal::solve_essential_minimal;
use crate::error::{Error, Result};
use crate::geometry::{
    epipolar_residual, CameraIntrinsics, Correspondence, EssentialMatrix, NormalizedCoord,
};
use crate::par;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RansacConfig {
    /// Inlier bound on the algebraic residual in normalized coordinates.
    pub threshold: f64,
    pub max_iterations: usize,
    pub confidence: f64,
    pub seed: u64,
}

impl Default for RansacConfig {
    fn default() -> Self {
        Self {
            threshold: 1e-3,
            max_iterations: 1000,
            confidence: 0.999,
            seed: 0,
        }
    }
}

impl RansacConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.threshold > 0.0) || !self.threshold.is_finite() {
            return Err(Error::InvalidInput(
                "ransac threshold must be positive".into(),
            ));
        }
        if !(self.confidence > 0.0 && self.confidence < 1.0) {
            return Err(Error::InvalidInput(
                "ransac confidence must lie in (0, 1)".into(),
            ));
        }
        if self.max_iterations == 0 {
            return Err(Error::InvalidInput(
                "ransac needs at least one iteration".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RansacResult {
    pub essential: EssentialMatrix,
    pub inlier_mask: Vec<bool>,
    pub iterations_used: usize,
    pub inlier_residual_rms: f64,
}

impl RansacResult {
    pub fn inlier_count(&self) -> usize {
        self.inlier_mask.iter().filter(|&&b| b).count()
    }
}

/// Iterations are evaluated in fixed-size batches. Each iteration draws its
/// sample from its own ChaCha stream keyed by `(seed, iteration)`, and
/// batch results are merged in iteration order, so the outcome does not
/// depend on thread scheduling.
const BATCH: usize = 32;
const SAMPLE_SIZE: usize = 5;
const POLISH_ROUNDS: usize = 5;

#[derive(Debug, Clone)]
struct Hypothesis {
    essential: EssentialMatrix,
    inliers: usize,
    rms: f64,
    /// Truncated quadratic cost `sum min(r², τ²)`.
    cost: f64,
}

impl Hypothesis {
    // A bare inlier count lets a slightly wrong model win by catching one
    // stray outlier inside its band; the truncated cost also charges it for
    // fitting the real inliers loosely.
    fn beats(&self, other: &Hypothesis) -> bool {
        self.cost < other.cost || (self.cost == other.cost && self.inliers > other.inliers)
    }
}

fn score(
    e: &EssentialMatrix,
    points: &[(NormalizedCoord, NormalizedCoord)],
    threshold: f64,
) -> Hypothesis {
    let mut inliers = 0;
    let mut sq = 0.0;
    let cap = threshold * threshold;
    let mut cost = 0.0;
    for (p1, p2) in points {
        let r = epipolar_residual(e, p1, p2);
        if r <= threshold {
            inliers += 1;
            sq += r * r;
            cost += r * r;
        } else {
            cost += cap;
        }
    }
    Hypothesis {
        essential: *e,
        inliers,
        rms: if inliers > 0 {
            (sq / inliers as f64).sqrt()
        } else {
            f64::INFINITY
        },
        cost,
    }
}

fn run_iteration(
    iteration: usize,
    points: &[(NormalizedCoord, NormalizedCoord)],
    cfg: &RansacConfig,
) -> Option<Hypothesis> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(iteration as u64);
    let idx = sample(&mut rng, points.len(), SAMPLE_SIZE);
    let five: Vec<_> = idx.iter().map(|i| points[i]).collect();
    let solution = solve_essential_minimal(&five).ok()?;
    let mut best: Option<Hypothesis> = None;
    for e in &solution.candidates {
        let h = score(e, points, cfg.threshold);
        if best.as_ref().is_none_or(|b| h.beats(b)) {
            best = Some(h);
        }
    }
    best
}

/// Least-squares essential matrix over the consensus set of `e`, projected
/// onto the essential manifold. `None` when the set is too small or the
/// fit is degenerate.
fn refit(
    e: &EssentialMatrix,
    points: &[(NormalizedCoord, NormalizedCoord)],
    threshold: f64,
) -> Option<EssentialMatrix> {
    let mut ata = SMatrix::<f64, 9, 9>::zeros();
    let mut n = 0;
    for (p1, p2) in points {
        if epipolar_residual(e, p1, p2) > threshold {
            continue;
        }
        let (a, b) = (p1.as_vector(), p2.as_vector());
        let row = SMatrix::<f64, 9, 1>::from_fn(|k, _| b[k / 3] * a[k % 3]);
        ata += row * row.transpose();
        n += 1;
    }
    if n < 8 {
        return None;
    }
    let eig = ata.symmetric_eigen();
    let (i, _) = eig.eigenvalues.argmin();
    let v = eig.eigenvectors.column(i);
    let m = Matrix3::from_fn(|r, c| v[3 * r + c]);
    let svd = SVD::new(m, true, true);
    let (u, v_t) = (svd.u?, svd.v_t?);
    let mut s = svd.singular_values;
    // Nearest essential matrix: equal top singular values, zero third.
    let (lo, _) = s.argmin();
    let mean = (s.sum() - s[lo]) / 2.0;
    s = Vector3::from_fn(|k, _| if k == lo { 0.0 } else { mean });
    EssentialMatrix::unit(u * Matrix3::from_diagonal(&s) * v_t).ok()
}

/// Refits on the consensus set while that lowers the cost.
fn polish(
    mut best: Hypothesis,
    points: &[(NormalizedCoord, NormalizedCoord)],
    threshold: f64,
) -> Hypothesis {
    for _ in 0..POLISH_ROUNDS {
        let Some(e) = refit(&best.essential, points, threshold) else {
            break;
        };
        let h = score(&e, points, threshold);
        if !h.beats(&best) {
            break;
        }
        best = h;
    }
    best
}

fn required_iterations(inlier_ratio: f64, confidence: f64) -> f64 {
    let good = inlier_ratio.powi(SAMPLE_SIZE as i32);
    if good >= 1.0 {
        return 1.0;
    }
    if good <= 0.0 {
        return f64::INFINITY;
    }
    (1.0 - confidence).ln() / (1.0 - good).ln()
}

/// Robust essential matrix estimation on normalized correspondences.
pub fn ransac_essential_normalized(
    points: &[(NormalizedCoord, NormalizedCoord)],
    cfg: &RansacConfig,
) -> Result<RansacResult> {
    cfg.validate()?;
    if points.len() < SAMPLE_SIZE {
        return Err(Error::InsufficientData {
            needed: SAMPLE_SIZE,
            got: points.len(),
        });
    }
    let mut best: Option<Hypothesis> = None;
    let mut done = 0;
    while done < cfg.max_iterations {
        let batch = BATCH.min(cfg.max_iterations - done);
        let results = par::map_range(batch, |i| run_iteration(done + i, points, cfg));
        for h in results.into_iter().flatten() {
            if best.as_ref().is_none_or(|b| h.beats(b)) {
                best = Some(h);
            }
        }
        done += batch;
        if let Some(b) = &best {
            let ratio = b.inliers as f64 / points.len() as f64;
            if done as f64 >= required_iterations(ratio, cfg.confidence) {
                break;
            }
        }
    }
    let best = best
        .filter(|b| b.inliers >= SAMPLE_SIZE)
        .ok_or_else(|| Error::EstimationFailure("no model reached 5 inliers".into()))?;
    let best = polish(best, points, cfg.threshold);
    let inlier_mask = points
        .iter()
        .map(|(p1, p2)| epipolar_residual(&best.essential, p1, p2) <= cfg.threshold)
        .collect();
    Ok(RansacResult {
        essential: best.essential,
        inlier_mask,
        iterations_used: done,
        inlier_residual_rms: best.rms,
    })
}

/// Robust essential matrix estimation from pixel matches.
pub fn ransac_essential(
    matches: &[Correspondence],
    k1: &CameraIntrinsics,
    k2: &CameraIntrinsics,
    cfg: &RansacConfig,
) -> Result<RansacResult> {
    if matches.len() < SAMPLE_SIZE {
        return Err(Error::InsufficientData {
            needed: SAMPLE_SIZE,
            got: matches.len(),
        });
    }
    let points = matches
        .iter()
        .map(|c| c.normalized(k1, k2))
        .collect::<Result<Vec<_>>>()?;
    ransac_essential_normalized(&points, cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn too_few_matches() {
        let m = vec![Correspondence::new(1.0, 2.0, 3.0, 4.0).unwrap(); 4];
        let k = CameraIntrinsics::identity();
        assert!(matches!(
            ransac_essential(&m, &k, &k, &RansacConfig::default()),
            Err(Error::InsufficientData { needed: 5, got: 4 })
        ));
    }

    #[test]
    fn config_validation() {
        let mut c = RansacConfig::default();
        c.validate().unwrap();
        c.confidence = 1.0;
        assert!(c.validate().is_err());
        c = RansacConfig {
            threshold: 0.0,
            ..Default::default()
        };
        assert!(c.validate().is_err());
    }

    #[test]
    fn iteration_bound() {
        assert_eq!(required_iterations(1.0, 0.999), 1.0);
        assert!(required_iterations(0.0, 0.999).is_infinite());
        let n = required_iterations(0.7, 0.999);
        assert!(n > 30.0 && n < 45.0, "{n}");
    }
}
