use dsvs::gmr::{responsibilities, GaussianComponent, GmrModel};
use dsvs::harness::config::SceneConfig;
use dsvs::rds::ClockSignal;
use dsvs::vision::{interaction_matrix, project_with_depths, pseudoinverse, Scene, Vec3};
use nalgebra::{DMatrix, DVector, Matrix3};
use proptest::prelude::*;

fn scene() -> Scene {
    SceneConfig::default().build().unwrap()
}

fn offset() -> impl Strategy<Value = Vec3> {
    (-0.2..0.2f64, -0.2..0.2f64, -0.3..0.2f64).prop_map(|(x, y, z)| Vec3::new(x, y, z))
}

proptest! {
    #[test]
    fn pseudoinverse_satisfies_penrose_identities(p in offset()) {
        let s = scene();
        let (features, depths) = project_with_depths(&s.camera_at(s.target.position + p), &s.pattern, &s.intrinsics).unwrap();
        let l = interaction_matrix(&features, &depths).unwrap();
        let pinv = pseudoinverse(&l);
        prop_assert_eq!(pinv.rank, 3);
        let m = pinv.matrix;
        let rel = |a: f64, b: f64| a / b;
        prop_assert!(rel((l * m * l - l).norm(), l.norm()) < 1e-13);
        prop_assert!(rel((m * l * m - m).norm(), m.norm()) < 1e-13);
        let lm = l * m;
        prop_assert!((lm - lm.transpose()).norm() < 1e-13);
        prop_assert!((m * l - Matrix3::identity()).norm() < 1e-13);
        // full column rank: the pseudoinverse solves the normal equations
        let normal = (l.transpose() * l).try_inverse().unwrap() * l.transpose();
        prop_assert!(rel((normal - m).norm(), m.norm()) < 1e-12);
    }

    #[test]
    fn cartesian_error_is_the_displacement_to_first_order(dir in offset(), scale in 1e-4..1e-2f64) {
        prop_assume!(dir.norm() > 1e-3);
        let s = scene();
        let dp = dir.normalize() * scale;
        let eps = s.epsilon(&s.error(&s.camera_at(s.target.position + dp)).unwrap());
        prop_assert!((eps - dp).norm() <= 10.0 * scale * scale, "{eps} vs {dp}");
    }

    #[test]
    fn responsibilities_form_a_distribution(
        means in prop::collection::vec((-1.0..1.0f64, -1.0..1.0f64), 1..5),
        spread in 0.05..2.0f64,
        x in -3.0..3.0f64,
        y in -3.0..3.0f64,
    ) {
        let k = means.len();
        let components: Vec<GaussianComponent> = means
            .iter()
            .enumerate()
            .map(|(i, &(a, b))| GaussianComponent {
                prior: 1.0 / k as f64,
                mean: DVector::from_vec(vec![a, b]),
                covariance: DMatrix::identity(2, 2) * spread * (1.0 + i as f64),
            })
            .collect();
        let r = responsibilities(&components, &DVector::from_vec(vec![x, y])).unwrap();
        prop_assert!(r.iter().all(|&w| (0.0..=1.0).contains(&w)));
        prop_assert!((r.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn single_component_regression_is_affine(a in -1.0..1.0f64, b in -1.0..1.0f64, t in -0.5..0.5f64) {
        // joint Gaussian with output = 2 * input plus independent noise
        let mut cov = DMatrix::identity(6, 6);
        for i in 0..3 {
            cov[(i + 3, i)] = 2.0;
            cov[(i, i + 3)] = 2.0;
            cov[(i + 3, i + 3)] = 4.5;
        }
        let model = GmrModel::new(
            vec![GaussianComponent { prior: 1.0, mean: DVector::zeros(6), covariance: cov }],
            0,
        )
        .unwrap();
        let x = Vec3::new(a, b, t);
        prop_assert!((model.predict_mean(&x) - 2.0 * x).norm() < 1e-12);
    }

    #[test]
    fn clock_is_bounded_and_non_increasing(t0 in 0.0..5.0f64, tau in 0.01..2.0f64, t in 0.0..10.0f64, dt in 0.0..1.0f64) {
        let clock = ClockSignal::hold_then_decay(t0, tau).unwrap();
        let (h0, h1) = (clock.value(t), clock.value(t + dt));
        prop_assert!((0.0..=1.0).contains(&h0));
        prop_assert!(h1 <= h0);
    }
}
