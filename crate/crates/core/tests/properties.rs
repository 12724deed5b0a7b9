use epigeom::fivepoint::{decompose_normalized, solve_essential_minimal};
use epigeom::geometry::{
    epipolar_residual, essential_from_pose, so3_exp, so3_log, NormalizedCoord, PoseSE3,
};
use epigeom::losses::{ssim_map, weighted_photometric_loss, photometric_loss, EpipolarWeightMap};
use epigeom::metrics::{ate_snippet, eval_depth, DepthEvalConfig, TrajectorySnippet};
use epigeom::raster::{DepthMap, ImageBuffer};
use epigeom::synthetic::random_point_pairs;
use nalgebra::Vector3;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn vec3(r: f64) -> impl Strategy<Value = Vector3<f64>> {
    (-r..r, -r..r, -r..r).prop_map(|(a, b, c)| Vector3::new(a, b, c))
}

fn pose() -> impl Strategy<Value = PoseSE3> {
    (vec3(1.0), vec3(2.0)).prop_map(|(w, t)| PoseSE3::from_axis_angle(&w, t))
}

/// Random pose with a translation long enough for a well-posed essential
/// matrix.
fn moving_pose() -> impl Strategy<Value = PoseSE3> {
    (vec3(0.3), vec3(1.0))
        .prop_filter("baseline", |(_, t)| t.norm() > 0.2)
        .prop_map(|(w, t)| PoseSE3::from_axis_angle(&w, t))
}

fn image(w: usize, h: usize) -> impl Strategy<Value = ImageBuffer> {
    proptest::collection::vec(0.0..1.0f64, w * h)
        .prop_map(move |d| ImageBuffer::new(w, h, 1, d).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn so3_log_inverts_exp(w in vec3(1.5)) {
        prop_assume!(w.norm() < 3.0);
        let back = so3_log(&so3_exp(&w));
        prop_assert!((back - w).norm() < 1e-9, "{w} -> {back}");
    }

    #[test]
    fn pose_inverse_composes_to_identity(p in pose(), x in vec3(10.0)) {
        let id = p.compose(&p.inverse());
        prop_assert!((id.transform(&x) - x).norm() < 1e-9);
        prop_assert!((p.inverse().transform(&p.transform(&x)) - x).norm() < 1e-9);
    }

    #[test]
    fn row_major_round_trip(p in pose()) {
        let q = PoseSE3::from_row_major(&p.to_row_major()).unwrap();
        prop_assert_eq!(p, q);
    }

    #[test]
    fn essential_is_unit_with_equal_singular_values(p in moving_pose()) {
        let e = essential_from_pose(&p).unwrap();
        let s = e.singular_values();
        prop_assert!((e.e.norm() - 1.0).abs() < 1e-12);
        prop_assert!((s[0] - s[1]).abs() < 1e-9 && s[2] < 1e-9, "{s}");
    }

    #[test]
    fn projected_points_satisfy_the_epipolar_constraint(p in moving_pose(), seed in any::<u64>()) {
        let e = essential_from_pose(&p).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for (a, b) in random_point_pairs(&mut rng, &p, 20) {
            prop_assert!(epipolar_residual(&e, &a, &b) < 1e-12);
        }
    }

    #[test]
    fn five_point_recovers_the_true_pose(p in moving_pose(), seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pairs = random_point_pairs(&mut rng, &p, 5);
        let truth = essential_from_pose(&p).unwrap();
        let Ok(sol) = solve_essential_minimal(&pairs) else {
            // Near-degenerate draws are allowed to be rejected.
            return Ok(());
        };
        let best = sol
            .candidates
            .iter()
            .min_by(|a, b| a.distance_up_to_scale(&truth).total_cmp(&b.distance_up_to_scale(&truth)))
            .unwrap();
        prop_assert!(best.distance_up_to_scale(&truth) < 1e-6);
        let q = decompose_normalized(best, &pairs).unwrap();
        prop_assert!(q.rotation_angle_to(&p) < 1e-6);
        prop_assert!(q.translation_angle_to(&p).unwrap() < 1e-6);
    }

    #[test]
    fn ssim_is_symmetric_and_bounded(a in image(12, 10), b in image(12, 10)) {
        let ab = ssim_map(&a, &b).unwrap();
        let ba = ssim_map(&b, &a).unwrap();
        for (x, y) in ab.iter().zip(&ba) {
            prop_assert!((x - y).abs() < 1e-12);
            prop_assert!(*x <= 1.0 + 1e-12 && *x >= -1.0 - 1e-12);
        }
    }

    #[test]
    fn weighting_never_lowers_the_photometric_loss(
        a in image(9, 7),
        b in image(9, 7),
        r in proptest::collection::vec(-2.0..2.0f64, 63),
    ) {
        let mask = vec![true; 63];
        let weights = EpipolarWeightMap {
            weights: r.iter().map(|v: &f64| v.abs().exp()).collect(),
            residuals: r.clone(),
            valid: mask.clone(),
        };
        let plain = photometric_loss(&a, &b, &mask).unwrap().value;
        let weighted = weighted_photometric_loss(&a, &b, &mask, &weights).unwrap().value;
        prop_assert!(weighted >= plain - 1e-15);
    }

    #[test]
    fn median_scaling_removes_global_scale(
        gt in proptest::collection::vec(1.0..70.0f64, 64),
        noise in proptest::collection::vec(0.7..1.4f64, 64),
        s in 0.01..100.0f64,
    ) {
        let g = DepthMap::dense(8, 8, gt.clone()).unwrap();
        let p: Vec<f64> = gt.iter().zip(&noise).map(|(a, b)| a * b).collect();
        let cfg = DepthEvalConfig::cap_80m();
        let base = eval_depth(&DepthMap::dense(8, 8, p.clone()).unwrap(), &g, &cfg).unwrap().to_array();
        let scaled = DepthMap::dense(8, 8, p.iter().map(|v| v * s).collect()).unwrap();
        let other = eval_depth(&scaled, &g, &cfg).unwrap().to_array();
        for (x, y) in base.iter().zip(&other) {
            prop_assert!((x - y).abs() < 1e-9 * x.abs().max(1.0), "{x} vs {y}");
        }
    }

    #[test]
    fn ate_ignores_prediction_scale(ps in proptest::collection::vec(pose(), 3), s in 0.1..10.0f64) {
        let gt = TrajectorySnippet::new(vec![0, 1, 2], ps.clone()).unwrap();
        let pred: Vec<PoseSE3> = ps
            .iter()
            .map(|p| PoseSE3 { translation: p.translation * 1.1 + Vector3::new(0.05, 0.0, 0.0), ..*p })
            .collect();
        let scaled: Vec<PoseSE3> = pred.iter().map(|p| PoseSE3 { translation: p.translation * s, ..*p }).collect();
        let a = ate_snippet(&TrajectorySnippet::new(vec![0, 1, 2], pred).unwrap(), &gt).unwrap();
        let b = ate_snippet(&TrajectorySnippet::new(vec![0, 1, 2], scaled).unwrap(), &gt).unwrap();
        prop_assert!((a - b).abs() < 1e-9 * a.max(1.0));
    }
}

#[test]
fn normalized_coords_are_homogeneous() {
    let p = NormalizedCoord::from_point(&Vector3::new(2.0, -4.0, 2.0)).unwrap();
    assert_eq!(p.as_vector(), &Vector3::new(1.0, -2.0, 1.0));
    assert!(NormalizedCoord::from_point(&Vector3::new(1.0, 1.0, 0.0)).is_err());
}
