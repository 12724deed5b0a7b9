//! Minimal five-point essential matrix solver.
//!
//! The five epipolar equations leave a four-dimensional null space
//! `E = x X + y Y + z Z + W`. Substituting into `det(E) = 0` and the trace
//! constraint `2 E E^T E - tr(E E^T) E = 0` gives ten cubics in `(x, y, z)`.
//! Gauss-Jordan elimination on the ten monomials containing `x` or `y` of
//! degree two or more leaves a 3x3 system in `[x, y, 1]` whose entries are
//! polynomials in `z`; its determinant is the degree-10 polynomial whose
//! real roots enumerate the solutions.

use nalgebra::{DMatrix, Matrix3, SMatrix, Vector3, SVD};

use crate::error::{Error, Result};
use crate::geometry::{EssentialMatrix, NormalizedCoord};

/// Up to ten essential matrices consistent with five correspondences.
#[derive(Debug, Clone)]
pub struct MinimalSolution {
    pub candidates: Vec<EssentialMatrix>,
}

/// Residual bound every returned candidate must meet on its five inputs.
pub const CANDIDATE_RESIDUAL_TOL: f64 = 1e-8;

/// Maximum number of real roots of the degree-10 polynomial.
pub const MAX_CANDIDATES: usize = 10;

// Monomials in Nister's order; the first ten are eliminated.
//  0 x^3   1 y^3   2 x^2y  3 xy^2  4 x^2z  5 x^2   6 y^2z  7 y^2   8 xyz  9 xy
// 10 xz^2 11 xz   12 x    13 yz^2 14 yz   15 y    16 z^3  17 z^2 18 z   19 1
const MONOMIALS: [(usize, usize, usize); 20] = [
    (3, 0, 0),
    (0, 3, 0),
    (2, 1, 0),
    (1, 2, 0),
    (2, 0, 1),
    (2, 0, 0),
    (0, 2, 1),
    (0, 2, 0),
    (1, 1, 1),
    (1, 1, 0),
    (1, 0, 2),
    (1, 0, 1),
    (1, 0, 0),
    (0, 1, 2),
    (0, 1, 1),
    (0, 1, 0),
    (0, 0, 3),
    (0, 0, 2),
    (0, 0, 1),
    (0, 0, 0),
];

/// Dense polynomial in x, y, z of total degree at most three.
#[derive(Clone, Copy)]
struct Cubic([f64; 64]);

impl Cubic {
    fn zero() -> Self {
        Cubic([0.0; 64])
    }

    fn idx(a: usize, b: usize, c: usize) -> usize {
        a * 16 + b * 4 + c
    }

    fn linear(x: f64, y: f64, z: f64, w: f64) -> Self {
        let mut p = Self::zero();
        p.0[Self::idx(1, 0, 0)] = x;
        p.0[Self::idx(0, 1, 0)] = y;
        p.0[Self::idx(0, 0, 1)] = z;
        p.0[Self::idx(0, 0, 0)] = w;
        p
    }

    fn mul(&self, other: &Cubic) -> Cubic {
        let mut out = Cubic::zero();
        for (i, &u) in self.0.iter().enumerate() {
            if u == 0.0 {
                continue;
            }
            let (a1, b1, c1) = (i / 16, (i / 4) % 4, i % 4);
            for (j, &v) in other.0.iter().enumerate() {
                if v == 0.0 {
                    continue;
                }
                let (a2, b2, c2) = (j / 16, (j / 4) % 4, j % 4);
                let (a, b, c) = (a1 + a2, b1 + b2, c1 + c2);
                debug_assert!(a + b + c <= 3, "degree overflow");
                out.0[Self::idx(a, b, c)] += u * v;
            }
        }
        out
    }

    fn add(&self, other: &Cubic) -> Cubic {
        let mut out = *self;
        for (o, v) in out.0.iter_mut().zip(other.0.iter()) {
            *o += v;
        }
        out
    }

    fn scale(&self, s: f64) -> Cubic {
        let mut out = *self;
        out.0.iter_mut().for_each(|v| *v *= s);
        out
    }

    fn coefficients(&self) -> [f64; 20] {
        let mut row = [0.0; 20];
        for (k, &(a, b, c)) in MONOMIALS.iter().enumerate() {
            row[k] = self.0[Self::idx(a, b, c)];
        }
        row
    }
}

type PolyMatrix = [[Cubic; 3]; 3];

fn poly_matmul(a: &PolyMatrix, b: &PolyMatrix) -> PolyMatrix {
    let mut out = [[Cubic::zero(); 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            let mut acc = Cubic::zero();
            for k in 0..3 {
                acc = acc.add(&a[i][k].mul(&b[k][j]));
            }
            out[i][j] = acc;
        }
    }
    out
}

fn poly_transpose(a: &PolyMatrix) -> PolyMatrix {
    let mut out = [[Cubic::zero(); 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            out[i][j] = a[j][i];
        }
    }
    out
}

/// Ten cubic constraints as a 10x20 coefficient matrix.
fn constraint_matrix(basis: &[[f64; 9]; 4]) -> SMatrix<f64, 10, 20> {
    let mut e = [[Cubic::zero(); 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            let k = 3 * i + j;
            e[i][j] = Cubic::linear(basis[0][k], basis[1][k], basis[2][k], basis[3][k]);
        }
    }
    let eet = poly_matmul(&e, &poly_transpose(&e));
    let trace = eet[0][0].add(&eet[1][1]).add(&eet[2][2]);
    let eete = poly_matmul(&eet, &e);

    let mut m = SMatrix::<f64, 10, 20>::zeros();
    let det = e[0][0]
        .mul(
            &e[1][1]
                .mul(&e[2][2])
                .add(&e[1][2].mul(&e[2][1]).scale(-1.0)),
        )
        .add(
            &e[0][1]
                .mul(
                    &e[1][0]
                        .mul(&e[2][2])
                        .add(&e[1][2].mul(&e[2][0]).scale(-1.0)),
                )
                .scale(-1.0),
        )
        .add(
            &e[0][2].mul(
                &e[1][0]
                    .mul(&e[2][1])
                    .add(&e[1][1].mul(&e[2][0]).scale(-1.0)),
            ),
        );
    for (c, v) in det.coefficients().iter().enumerate() {
        m[(0, c)] = *v;
    }
    for i in 0..3 {
        for j in 0..3 {
            let row = eete[i][j].scale(2.0).add(&trace.mul(&e[i][j]).scale(-1.0));
            for (c, v) in row.coefficients().iter().enumerate() {
                m[(1 + 3 * i + j, c)] = *v;
            }
        }
    }
    m
}

/// Univariate polynomial, coefficients in ascending powers.
#[derive(Debug, Clone, Default)]
struct Poly(Vec<f64>);

impl Poly {
    fn mul(&self, other: &Poly) -> Poly {
        let mut out = vec![0.0; self.0.len() + other.0.len() - 1];
        for (i, a) in self.0.iter().enumerate() {
            for (j, b) in other.0.iter().enumerate() {
                out[i + j] += a * b;
            }
        }
        Poly(out)
    }

    fn sub(&self, other: &Poly) -> Poly {
        let n = self.0.len().max(other.0.len());
        Poly(
            (0..n)
                .map(|i| {
                    self.0.get(i).copied().unwrap_or(0.0) - other.0.get(i).copied().unwrap_or(0.0)
                })
                .collect(),
        )
    }

    fn add(&self, other: &Poly) -> Poly {
        let n = self.0.len().max(other.0.len());
        Poly(
            (0..n)
                .map(|i| {
                    self.0.get(i).copied().unwrap_or(0.0) + other.0.get(i).copied().unwrap_or(0.0)
                })
                .collect(),
        )
    }

    fn eval(&self, z: f64) -> f64 {
        self.0.iter().rev().fold(0.0, |acc, c| acc * z + c)
    }

    fn eval_with_derivative(&self, z: f64) -> (f64, f64) {
        let mut p = 0.0;
        let mut dp = 0.0;
        for c in self.0.iter().rev() {
            dp = dp * z + p;
            p = p * z + c;
        }
        (p, dp)
    }

    /// Real roots via the eigenvalues of the companion matrix.
    fn real_roots(&self) -> Vec<f64> {
        let scale = self.0.iter().fold(0.0f64, |m, c| m.max(c.abs()));
        if scale == 0.0 {
            return Vec::new();
        }
        let mut coeffs: Vec<f64> = self.0.iter().map(|c| c / scale).collect();
        while coeffs.len() > 1 && coeffs.last().map_or(false, |c| c.abs() < 1e-14) {
            coeffs.pop();
        }
        let degree = coeffs.len() - 1;
        if degree == 0 {
            return Vec::new();
        }
        let lead = coeffs[degree];
        let mut companion = DMatrix::<f64>::zeros(degree, degree);
        for i in 1..degree {
            companion[(i, i - 1)] = 1.0;
        }
        for i in 0..degree {
            companion[(i, degree - 1)] = -coeffs[i] / lead;
        }
        let Some(schur) = nalgebra::linalg::Schur::try_new(companion, f64::EPSILON, 0) else {
            return Vec::new();
        };
        let eigen = schur.complex_eigenvalues();
        let poly = Poly(coeffs);
        eigen
            .iter()
            .filter(|c| c.im.abs() < 1e-8 * (1.0 + c.re.abs()))
            .map(|c| poly.polish(c.re))
            .collect()
    }

    fn polish(&self, mut z: f64) -> f64 {
        for _ in 0..8 {
            let (p, dp) = self.eval_with_derivative(z);
            if dp == 0.0 || !dp.is_finite() {
                break;
            }
            let step = p / dp;
            let next = z - step;
            if !next.is_finite() || self.eval(next).abs() > p.abs() {
                break;
            }
            z = next;
            if step.abs() <= 1e-16 * (1.0 + z.abs()) {
                break;
            }
        }
        z
    }
}

/// Solves for every essential matrix consistent with five calibrated
/// correspondences.
pub fn solve_essential_minimal(
    pairs: &[(NormalizedCoord, NormalizedCoord)],
) -> Result<MinimalSolution> {
    if pairs.len() != 5 {
        return Err(Error::InvalidInput(format!(
            "minimal solver takes exactly 5 correspondences, got {}",
            pairs.len()
        )));
    }
    for (i, a) in pairs.iter().enumerate() {
        for b in &pairs[i + 1..] {
            if (a.0.as_vector() - b.0.as_vector()).norm() < 1e-12
                && (a.1.as_vector() - b.1.as_vector()).norm() < 1e-12
            {
                return Err(Error::DegenerateConfiguration(
                    "duplicate correspondence".into(),
                ));
            }
        }
    }
    if is_pure_rotation(pairs) {
        return Err(Error::DegenerateConfiguration(
            "correspondences are explained by a pure rotation (zero baseline)".into(),
        ));
    }

    let basis = null_space(pairs)?;
    let m = constraint_matrix(&basis);
    let lhs = m.fixed_view::<10, 10>(0, 0).into_owned();
    let rhs = m.fixed_view::<10, 10>(0, 10).into_owned();
    let reduced = lhs
        .full_piv_lu()
        .solve(&rhs)
        .ok_or_else(|| Error::DegenerateConfiguration("singular elimination template".into()))?;

    // Rows (4,5), (6,7), (8,9) pair x^2z/x^2, y^2z/y^2, xyz/xy.
    let b = |r: usize, c: usize| reduced[(r, c)];
    let mut bz: [[Poly; 3]; 3] = Default::default();
    for (k, (ra, rb)) in [(4, 5), (6, 7), (8, 9)].into_iter().enumerate() {
        bz[k][0] = Poly(vec![
            b(ra, 2),
            b(ra, 1) - b(rb, 2),
            b(ra, 0) - b(rb, 1),
            -b(rb, 0),
        ]);
        bz[k][1] = Poly(vec![
            b(ra, 5),
            b(ra, 4) - b(rb, 5),
            b(ra, 3) - b(rb, 4),
            -b(rb, 3),
        ]);
        bz[k][2] = Poly(vec![
            b(ra, 9),
            b(ra, 8) - b(rb, 9),
            b(ra, 7) - b(rb, 8),
            b(ra, 6) - b(rb, 7),
            -b(rb, 6),
        ]);
    }
    let minor = |i: usize, j: usize, k: usize, l: usize| {
        bz[1][i].mul(&bz[2][j]).sub(&bz[1][k].mul(&bz[2][l]))
    };
    let det = bz[0][0]
        .mul(&minor(1, 2, 2, 1))
        .sub(&bz[0][1].mul(&minor(0, 2, 2, 0)))
        .add(&bz[0][2].mul(&minor(0, 1, 1, 0)));

    let mut candidates = Vec::new();
    for z in det.real_roots() {
        let rows: Vec<Vector3<f64>> = (0..3)
            .map(|i| Vector3::new(bz[i][0].eval(z), bz[i][1].eval(z), bz[i][2].eval(z)))
            .collect();
        let null = [
            rows[0].cross(&rows[1]),
            rows[0].cross(&rows[2]),
            rows[1].cross(&rows[2]),
        ]
        .into_iter()
        .max_by(|a, b| a.norm().total_cmp(&b.norm()))
        .unwrap_or_else(Vector3::zeros);
        if null.z.abs() < 1e-14 * null.norm().max(1e-300) {
            continue;
        }
        let x = null.x / null.z;
        let y = null.y / null.z;
        let mut e = Matrix3::zeros();
        for i in 0..3 {
            for j in 0..3 {
                let k = 3 * i + j;
                e[(i, j)] = x * basis[0][k] + y * basis[1][k] + z * basis[2][k] + basis[3][k];
            }
        }
        let Ok(candidate) = EssentialMatrix::unit(e) else {
            continue;
        };
        let residual_ok = pairs.iter().all(|(p1, p2)| {
            crate::geometry::epipolar_residual(&candidate, p1, p2) < CANDIDATE_RESIDUAL_TOL
        });
        if residual_ok {
            candidates.push(candidate);
        }
    }
    candidates.truncate(MAX_CANDIDATES);
    if candidates.is_empty() {
        return Err(Error::DegenerateConfiguration(
            "no real essential matrix solutions".into(),
        ));
    }
    Ok(MinimalSolution { candidates })
}

/// Basis of the 4-dimensional space of matrices satisfying the five linear
/// epipolar equations, returned as row-major 3x3 matrices.
fn null_space(pairs: &[(NormalizedCoord, NormalizedCoord)]) -> Result<[[f64; 9]; 4]> {
    let mut a = SMatrix::<f64, 9, 9>::zeros();
    for (r, (p1, p2)) in pairs.iter().enumerate() {
        // Unit rays keep the rows comparably scaled.
        let u1 = p1.as_vector().normalize();
        let u2 = p2.as_vector().normalize();
        for i in 0..3 {
            for j in 0..3 {
                a[(r, 3 * i + j)] = u2[i] * u1[j];
            }
        }
    }
    let svd = SVD::new(a, false, true);
    let v_t = svd
        .v_t
        .ok_or_else(|| Error::DegenerateConfiguration("SVD failed".into()))?;
    let mut order: Vec<usize> = (0..9).collect();
    order.sort_by(|&i, &j| svd.singular_values[j].total_cmp(&svd.singular_values[i]));
    let s_max = svd.singular_values[order[0]];
    let s_fifth = svd.singular_values[order[4]];
    if s_max <= 0.0 || s_fifth < 1e-10 * s_max {
        return Err(Error::DegenerateConfiguration(
            "epipolar equations are rank deficient".into(),
        ));
    }
    let mut basis = [[0.0; 9]; 4];
    for (b, &row) in basis.iter_mut().zip(order[5..].iter()) {
        for k in 0..9 {
            b[k] = v_t[(row, k)];
        }
    }
    Ok(basis)
}

/// True when a single rotation maps every first-view ray onto its match.
fn is_pure_rotation(pairs: &[(NormalizedCoord, NormalizedCoord)]) -> bool {
    let mut h = Matrix3::zeros();
    for (p1, p2) in pairs {
        h += p2.as_vector().normalize() * p1.as_vector().normalize().transpose();
    }
    let svd = SVD::new(h, true, true);
    let (Some(u), Some(v_t)) = (svd.u, svd.v_t) else {
        return false;
    };
    let mut d = Matrix3::identity();
    if (u * v_t).determinant() < 0.0 {
        d[(2, 2)] = -1.0;
    }
    let r = u * d * v_t;
    pairs.iter().all(|(p1, p2)| {
        let a = r * p1.as_vector().normalize();
        let b = p2.as_vector().normalize();
        a.cross(&b).norm() < 1e-10 && a.dot(&b) > 0.0
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{essential_from_pose, PoseSE3};

    #[test]
    fn univariate_roots() {
        // (z - 1)(z + 2)(z - 3) = z^3 - 2z^2 - 5z + 6
        let p = Poly(vec![6.0, -5.0, -2.0, 1.0]);
        let mut r = p.real_roots();
        r.sort_by(|a, b| a.total_cmp(b));
        assert_eq!(r.len(), 3);
        for (got, want) in r.iter().zip([-2.0, 1.0, 3.0]) {
            assert!((got - want).abs() < 1e-12);
        }
        // z^2 + 1 has no real roots.
        assert!(Poly(vec![1.0, 0.0, 1.0]).real_roots().is_empty());
    }

    #[test]
    fn sideways_translation_scene() {
        let pose = PoseSE3::new(Matrix3::identity(), Vector3::new(1.0, 0.0, 0.0)).unwrap();
        let points = [
            Vector3::new(0.3, -0.2, 4.0),
            Vector3::new(-1.0, 0.5, 6.0),
            Vector3::new(0.8, 0.9, 5.0),
            Vector3::new(-0.4, -1.1, 3.5),
            Vector3::new(1.5, 0.1, 7.0),
        ];
        let pairs: Vec<_> = points
            .iter()
            .map(|x| {
                (
                    NormalizedCoord::from_point(x).unwrap(),
                    NormalizedCoord::from_point(&pose.transform(x)).unwrap(),
                )
            })
            .collect();
        let sol = solve_essential_minimal(&pairs).unwrap();
        let truth = essential_from_pose(&pose).unwrap();
        let best = sol
            .candidates
            .iter()
            .map(|c| c.distance_up_to_scale(&truth))
            .fold(f64::INFINITY, f64::min);
        assert!(best < 1e-6, "best distance {best}");
    }

    #[test]
    fn identical_pairs_are_degenerate() {
        let p = (
            NormalizedCoord::new(0.1, 0.2),
            NormalizedCoord::new(0.15, 0.2),
        );
        let r = solve_essential_minimal(&[p; 5]);
        assert!(matches!(r, Err(Error::DegenerateConfiguration(_))));
    }

    #[test]
    fn zero_baseline_is_degenerate() {
        let pose = PoseSE3::from_axis_angle(&Vector3::new(0.05, 0.1, -0.02), Vector3::zeros());
        let pairs: Vec<_> = [
            (0.1, 0.2),
            (-0.3, 0.4),
            (0.5, -0.1),
            (-0.2, -0.6),
            (0.7, 0.3),
        ]
        .iter()
        .map(|&(x, y)| {
            let p1 = NormalizedCoord::new(x, y);
            let p2 = NormalizedCoord::from_point(&(pose.rotation * p1.as_vector())).unwrap();
            (p1, p2)
        })
        .collect();
        assert!(matches!(
            solve_essential_minimal(&pairs),
            Err(Error::DegenerateConfiguration(_))
        ));
    }

    #[test]
    fn collinear_in_both_views_is_degenerate() {
        let pose =
            PoseSE3::from_axis_angle(&Vector3::new(0.0, 0.1, 0.0), Vector3::new(1.0, 0.0, 0.2));
        // Points on a 3D line project to lines in both views.
        let pairs: Vec<_> = (0..5)
            .map(|i| {
                let s = i as f64;
                let x = Vector3::new(-1.0 + 0.5 * s, 0.2 + 0.1 * s, 4.0 + 0.7 * s);
                (
                    NormalizedCoord::from_point(&x).unwrap(),
                    NormalizedCoord::from_point(&pose.transform(&x)).unwrap(),
                )
            })
            .collect();
        assert!(matches!(
            solve_essential_minimal(&pairs),
            Err(Error::DegenerateConfiguration(_))
        ));
    }

    #[test]
    fn wrong_count_is_rejected() {
        let p = (
            NormalizedCoord::new(0.1, 0.2),
            NormalizedCoord::new(0.15, 0.2),
        );
        assert!(solve_essential_minimal(&[p; 4]).is_err());
    }
}
