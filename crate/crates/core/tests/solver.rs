use lvs_calib::liegeo::{rot_exp, Pose, Vec3};
use lvs_calib::residual::{CalibrationState, StateVector};
use lvs_calib::solver::{calibrate, initial_state, lm_step, Dataset, SolverError, SolverOptions};
use lvs_calib::synth::{synthesize, ScenarioConfig};
use proptest::prelude::*;

fn short_scan(noise: f64, seed: u64) -> (Dataset, CalibrationState) {
    let cfg = ScenarioConfig {
        duration: 5.0,
        noise_sigma: noise,
        seed,
        ..Default::default()
    };
    let s = synthesize(&cfg);
    (s.to_dataset(), s.truth)
}

fn rough_init(data: &Dataset, truth: &CalibrationState) -> CalibrationState {
    let he = Pose::new(
        truth.hand_eye.rotation * rot_exp(&Vec3::new(-0.04, 0.02, 0.05)),
        truth.hand_eye.translation + Vec3::new(-4.0, 6.0, 3.0),
    );
    initial_state(data, he, 0.0).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn accepted_steps_lower_cost(noise in 0.0f64..0.4, seed in 0u64..1000) {
        let (data, truth) = short_scan(noise, seed);
        let report = calibrate(&data, &rough_init(&data, &truth), &SolverOptions::default()).unwrap();
        let accepted: Vec<_> = report.history.iter().filter(|h| h.accepted).collect();
        prop_assert!(accepted.len() >= 2);
        for w in accepted.windows(2) {
            prop_assert!(w[1].cost < w[0].cost);
        }
        for w in report.history.windows(2) {
            prop_assert!(w[1].iter > w[0].iter);
        }
        prop_assert!(report.rmse >= 0.0 && report.mae >= 0.0);
        prop_assert!(report.converged);
    }

    /// With every residual inside the Huber knee the cost is `N·rmse²/2`, so
    /// RMSE follows the cost down (up to rounding in the separate sums).
    #[test]
    fn accepted_rmse_non_increasing(noise in 0.0f64..0.15, seed in 0u64..1000) {
        let (data, truth) = short_scan(noise, seed);
        let report = calibrate(&data, &rough_init(&data, &truth), &SolverOptions::default()).unwrap();
        let accepted: Vec<_> = report.history.iter().filter(|h| h.accepted).collect();
        for w in accepted.windows(2) {
            prop_assert!(w[1].rmse <= w[0].rmse * (1.0 + 1e-12), "{} -> {}", w[0].rmse, w[1].rmse);
        }
    }

    #[test]
    fn retract_keeps_rotations_orthonormal(steps in prop::collection::vec(prop::array::uniform11(-0.5f64..0.5), 1..200)) {
        let (_, truth) = short_scan(0.0, 0);
        let mut state = truth;
        for s in &steps {
            state = state.retract(&StateVector::from_column_slice(s), 0.2);
        }
        for r in [state.hand_eye.rotation, state.line.basis()] {
            let m = r.matrix();
            prop_assert!((m.transpose() * m - nalgebra::Matrix3::identity()).norm() < 1e-9);
            prop_assert!((m.determinant() - 1.0).abs() < 1e-9);
        }
        prop_assert!(state.t_d.abs() <= 0.2);
    }
}

#[test]
fn truth_init_is_a_fixed_point() {
    let (data, truth) = short_scan(0.0, 0);
    let report = calibrate(&data, &truth, &SolverOptions::default()).unwrap();
    assert!(report.iterations <= 2, "{} iterations", report.iterations);
    assert!(report.rmse < 1e-9, "rmse {}", report.rmse);
    assert!(report.converged);
}

#[test]
fn flipped_line_init_reaches_same_cost() {
    let (data, truth) = short_scan(0.1, 5);
    let init = rough_init(&data, &truth);
    let flipped = CalibrationState::new(
        init.t_d,
        init.plucker().flipped().to_orthonormal(),
        init.hand_eye,
    );
    assert!((flipped.plucker().v + init.plucker().v).norm() < 1e-12);
    let opts = SolverOptions::default();
    let a = calibrate(&data, &init, &opts).unwrap();
    let b = calibrate(&data, &flipped, &opts).unwrap();
    assert!((a.cost - b.cost).abs() < 1e-9, "{} vs {}", a.cost, b.cost);
    assert!((a.state.t_d - b.state.t_d).abs() < 1e-9);
}

#[test]
fn thread_count_does_not_change_result() {
    let (data, truth) = short_scan(0.1, 9);
    let init = rough_init(&data, &truth);
    let run = |threads| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| calibrate(&data, &init, &SolverOptions::default()).unwrap())
    };
    let one = run(1);
    assert_eq!(one, run(4));
    assert_eq!(one, run(7));
}

#[test]
fn damping_shrinks_step() {
    let (data, truth) = short_scan(0.1, 2);
    let init = rough_init(&data, &truth);
    let mut last = f64::INFINITY;
    for k in -4..8 {
        let step = lm_step(&init, &data, 1.0, 10f64.powi(k)).unwrap();
        let norm = step.delta.norm();
        assert!(norm < last, "mu 1e{k}: {norm} !< {last}");
        last = norm;
    }
}

#[test]
fn out_of_range_features_give_insufficient_data() {
    let (mut data, truth) = short_scan(0.0, 0);
    data.features.iter_mut().skip(3).for_each(|f| f.t += 100.0);
    assert!(matches!(
        calibrate(&data, &truth, &SolverOptions::default()),
        Err(SolverError::InsufficientData { rows: 9 })
    ));
    assert!(matches!(
        initial_state(&data, truth.hand_eye, 0.0),
        Err(SolverError::InsufficientData { .. })
    ));
}
