use nalgebra::{Matrix3, Matrix4, Vector3, SVD};

use crate::error::{Error, Result};
use crate::geometry::{
    CameraIntrinsics, Correspondence, EssentialMatrix, NormalizedCoord, PoseSE3,
};

/// A linearly triangulated point in the first camera frame with its depth
/// in each view.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Triangulated {
    pub point: Vector3<f64>,
    pub depth1: f64,
    pub depth2: f64,
}

impl Triangulated {
    pub fn in_front(&self) -> bool {
        self.depth1 > 0.0 && self.depth2 > 0.0
    }
}

/// Linear (DLT) triangulation with cameras `[I|0]` and `[R|t]`.
pub fn triangulate(
    p1: &NormalizedCoord,
    p2: &NormalizedCoord,
    pose: &PoseSE3,
) -> Result<Triangulated> {
    if pose.translation.norm() <= 1e-12 {
        return Err(Error::NoIntersection("zero baseline".into()));
    }
    let r = &pose.rotation;
    let t = &pose.translation;
    let cam2 = |row: usize| [r[(row, 0)], r[(row, 1)], r[(row, 2)], t[row]];
    let cam1 = |row: usize| {
        let mut v = [0.0; 4];
        v[row] = 1.0;
        v
    };
    let mut a = Matrix4::zeros();
    let rows = [
        (p1.x(), cam1(2), cam1(0)),
        (p1.y(), cam1(2), cam1(1)),
        (p2.x(), cam2(2), cam2(0)),
        (p2.y(), cam2(2), cam2(1)),
    ];
    for (i, (coord, third, first)) in rows.iter().enumerate() {
        for j in 0..4 {
            a[(i, j)] = coord * third[j] - first[j];
        }
    }
    let svd = SVD::new(a, false, true);
    let v_t = svd
        .v_t
        .ok_or_else(|| Error::NoIntersection("SVD failed".into()))?;
    let smallest = (0..4)
        .min_by(|&i, &j| svd.singular_values[i].total_cmp(&svd.singular_values[j]))
        .unwrap_or(3);
    let h = v_t.row(smallest).transpose();
    if h[3].abs() < 1e-12 * h.norm() {
        return Err(Error::NoIntersection("rays are parallel".into()));
    }
    let point = Vector3::new(h[0] / h[3], h[1] / h[3], h[2] / h[3]);
    let depth2 = (pose.rotation * point + pose.translation).z;
    Ok(Triangulated {
        point,
        depth1: point.z,
        depth2,
    })
}

/// The four `(R, ±t)` factorizations of an essential matrix.
pub fn pose_candidates(e: &EssentialMatrix) -> [PoseSE3; 4] {
    let svd = SVD::new(e.e, true, true);
    let mut u = svd.u.unwrap_or_else(Matrix3::identity);
    let mut v_t = svd.v_t.unwrap_or_else(Matrix3::identity);
    // Order singular values descending so the null direction is column 3.
    let s = svd.singular_values;
    let mut order = [0usize, 1, 2];
    order.sort_by(|&i, &j| s[j].total_cmp(&s[i]));
    let u_sorted =
        Matrix3::from_columns(&[u.column(order[0]), u.column(order[1]), u.column(order[2])]);
    let v_t_sorted = Matrix3::from_rows(&[v_t.row(order[0]), v_t.row(order[1]), v_t.row(order[2])]);
    u = u_sorted;
    v_t = v_t_sorted;
    if u.determinant() < 0.0 {
        u = -u;
    }
    if v_t.determinant() < 0.0 {
        v_t = -v_t;
    }
    let w = Matrix3::new(0.0, -1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0);
    let ra = u * w * v_t;
    let rb = u * w.transpose() * v_t;
    let t: Vector3<f64> = u.column(2).into_owned().normalize();
    [
        PoseSE3 {
            rotation: ra,
            translation: t,
        },
        PoseSE3 {
            rotation: ra,
            translation: -t,
        },
        PoseSE3 {
            rotation: rb,
            translation: t,
        },
        PoseSE3 {
            rotation: rb,
            translation: -t,
        },
    ]
}

/// Recovers the relative pose from `e`, choosing among the four
/// factorizations by a cheirality vote over all `inliers`.
pub fn decompose_essential(
    e: &EssentialMatrix,
    inliers: &[Correspondence],
    k1: &CameraIntrinsics,
    k2: &CameraIntrinsics,
) -> Result<PoseSE3> {
    if inliers.is_empty() {
        return Err(Error::AmbiguousDecomposition(
            "no inlier correspondences".into(),
        ));
    }
    let normalized = inliers
        .iter()
        .map(|c| c.normalized(k1, k2))
        .collect::<Result<Vec<_>>>()?;
    decompose_normalized(e, &normalized)
}

pub fn decompose_normalized(
    e: &EssentialMatrix,
    inliers: &[(NormalizedCoord, NormalizedCoord)],
) -> Result<PoseSE3> {
    if inliers.is_empty() {
        return Err(Error::AmbiguousDecomposition(
            "no inlier correspondences".into(),
        ));
    }
    let candidates = pose_candidates(e);
    let votes: Vec<usize> = candidates
        .iter()
        .map(|pose| {
            inliers
                .iter()
                .filter(|(p1, p2)| triangulate(p1, p2, pose).is_ok_and(|t| t.in_front()))
                .count()
        })
        .collect();
    let best = *votes.iter().max().unwrap_or(&0);
    if best == 0 {
        return Err(Error::AmbiguousDecomposition(
            "no candidate places points in front of both cameras".into(),
        ));
    }
    let winners: Vec<usize> = (0..4).filter(|&i| votes[i] == best).collect();
    if winners.len() > 1 {
        return Err(Error::AmbiguousDecomposition(format!(
            "cheirality tie between {} candidates ({best} votes)",
            winners.len()
        )));
    }
    let mut pose = candidates[winners[0]];
    // Re-orthonormalize to scrub SVD round-off.
    let svd = SVD::new(pose.rotation, true, true);
    if let (Some(u), Some(v_t)) = (svd.u, svd.v_t) {
        pose.rotation = u * v_t;
    }
    Ok(pose)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::essential_from_pose;

    fn sideways() -> PoseSE3 {
        PoseSE3::new(Matrix3::identity(), Vector3::new(1.0, 0.0, 0.0)).unwrap()
    }

    #[test]
    fn triangulates_hand_point() {
        let pose = sideways();
        let x = Vector3::new(0.0, 0.0, 5.0);
        let p1 = NormalizedCoord::from_point(&x).unwrap();
        let p2 = NormalizedCoord::from_point(&pose.transform(&x)).unwrap();
        let t = triangulate(&p1, &p2, &pose).unwrap();
        assert!((t.point - x).norm() < 1e-9);
        assert!(t.in_front());
    }

    #[test]
    fn point_behind_second_camera() {
        // Second camera sits 10 units forward, beyond the point.
        let pose = PoseSE3::new(Matrix3::identity(), Vector3::new(0.3, 0.0, -10.0)).unwrap();
        let x = Vector3::new(0.5, 0.2, 5.0);
        let p1 = NormalizedCoord::from_point(&x).unwrap();
        let p2 = NormalizedCoord::from_point(&pose.transform(&x)).unwrap();
        let t = triangulate(&p1, &p2, &pose).unwrap();
        assert!(t.depth1 > 0.0);
        assert!(t.depth2 < 0.0);
        assert!((t.depth2 - (-5.0)).abs() < 1e-9);
    }

    #[test]
    fn zero_baseline_has_no_intersection() {
        let p = NormalizedCoord::new(0.1, 0.1);
        assert!(matches!(
            triangulate(&p, &p, &PoseSE3::identity()),
            Err(Error::NoIntersection(_))
        ));
    }

    #[test]
    fn parallel_rays_have_no_intersection() {
        let p = NormalizedCoord::new(0.0, 0.0);
        // Both rays along +z, baseline along x: they never meet.
        assert!(matches!(
            triangulate(&p, &p, &sideways()),
            Err(Error::NoIntersection(_))
        ));
    }

    #[test]
    fn empty_inliers_are_ambiguous() {
        let e = essential_from_pose(&sideways()).unwrap();
        let k = CameraIntrinsics::identity();
        assert!(matches!(
            decompose_essential(&e, &[], &k, &k),
            Err(Error::AmbiguousDecomposition(_))
        ));
    }

    #[test]
    fn negated_essential_gives_same_pose() {
        let pose = PoseSE3::from_axis_angle(
            &Vector3::new(0.02, -0.1, 0.03),
            Vector3::new(0.4, -0.1, 0.9).normalize(),
        );
        let e = essential_from_pose(&pose).unwrap();
        let pts: Vec<_> = (0..20)
            .map(|i| {
                let f = i as f64;
                let x = Vector3::new(
                    (f * 0.37).sin() * 2.0,
                    (f * 0.73).cos(),
                    4.0 + (f * 0.51).sin(),
                );
                (
                    NormalizedCoord::from_point(&x).unwrap(),
                    NormalizedCoord::from_point(&pose.transform(&x)).unwrap(),
                )
            })
            .collect();
        let a = decompose_normalized(&e, &pts).unwrap();
        let b = decompose_normalized(&e.negated(), &pts).unwrap();
        assert!((a.rotation - b.rotation).amax() < 1e-12);
        assert!((a.translation - b.translation).amax() < 1e-12);
        assert!(
            a.rotation_angle_to(&pose) < 1e-9,
            "{} {:?}",
            a.rotation_angle_to(&pose),
            a.translation_angle_to(&pose)
        );
        assert!(a.translation_angle_to(&pose).unwrap() < 1e-9);
    }
}
