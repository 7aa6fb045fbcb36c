//! Analytic-vs-numeric Jacobian comparison on randomized problems.
//!
//! The numeric side perturbs the state through the same retraction the
//! solver uses and differentiates the plain residual (mapping followed by
//! the point-to-line error) with central differences.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::liegeo::{rot_exp, PluckerLine, Pose, Vec3};
use crate::residual::{
    evaluate, residual, CalibrationState, FeatureObservation, StateJacobian, StateVector, COL_LINE,
    COL_ROT, COL_TD, COL_TRANS, STATE_DIM,
};
use crate::trajectory::{PoseBuffer, TimedPose, TrajectoryError};

/// Queries closer than this to a pose sample are skipped (seconds).
pub const BOUNDARY_GUARD: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CheckOptions {
    pub cases: usize,
    pub seed: u64,
    /// Central-difference step for every state component.
    pub step: f64,
    /// Maximum tolerated relative error.
    pub tolerance: f64,
    /// Negate the analytic `t_d` column before comparing.
    pub flip_td_sign: bool,
}

impl Default for CheckOptions {
    fn default() -> Self {
        Self {
            cases: 200,
            seed: 0x5eed,
            step: 1e-6,
            tolerance: 1e-5,
            flip_td_sign: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BlockError {
    pub name: &'static str,
    pub max_rel_error: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckReport {
    /// Blocks in column order: `t_d`, `phi`, `P`, `R`.
    pub blocks: Vec<BlockError>,
    pub cases: usize,
    pub tolerance: f64,
}

impl CheckReport {
    pub fn passed(&self) -> bool {
        self.blocks.iter().all(|b| b.max_rel_error < self.tolerance)
    }
}

const BLOCKS: [(&str, usize, usize); 4] = [
    ("t_d", COL_TD, 1),
    ("phi", COL_LINE, 4),
    ("P", COL_TRANS, 3),
    ("R", COL_ROT, 3),
];

/// Central-difference Jacobian of the residual under the solver retraction.
pub fn numeric_jacobian(
    state: &CalibrationState,
    buf: &PoseBuffer,
    obs: &FeatureObservation,
    step: f64,
) -> Result<StateJacobian, TrajectoryError> {
    let mut jac = StateJacobian::zeros();
    for k in 0..STATE_DIM {
        let mut d = StateVector::zeros();
        d[k] = step;
        let plus = residual(&state.retract(&d, f64::INFINITY), buf, obs)?;
        let minus = residual(&state.retract(&(-d), f64::INFINITY), buf, obs)?;
        jac.set_column(k, &((plus - minus) / (2.0 * step)));
    }
    Ok(jac)
}

/// Relative column error `‖a − n‖ / max(‖n‖, 1)`.
fn column_error(analytic: &StateJacobian, numeric: &StateJacobian, k: usize) -> f64 {
    let n = numeric.column(k);
    (analytic.column(k) - n).norm() / n.norm().max(1.0)
}

fn uniform_vec(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> Vec3 {
    Vec3::new(
        rng.random_range(lo..hi),
        rng.random_range(lo..hi),
        rng.random_range(lo..hi),
    )
}

fn random_buffer(rng: &mut ChaCha8Rng) -> PoseBuffer {
    let mut buf = PoseBuffer::new();
    let mut t = 0.0;
    let mut rot = rot_exp(&uniform_vec(rng, -2.0, 2.0));
    let mut pos = uniform_vec(rng, -500.0, 500.0) + Vec3::new(800.0, 0.0, 400.0);
    for _ in 0..8 {
        buf.insert(TimedPose::new(t, Pose::new(rot, pos)))
            .expect("increasing timestamps");
        t += rng.random_range(0.004..0.2);
        rot *= rot_exp(&uniform_vec(rng, -0.3, 0.3));
        pos += uniform_vec(rng, -20.0, 20.0);
    }
    buf
}

/// One randomized state/observation pair away from sample boundaries.
pub fn random_case(rng: &mut ChaCha8Rng) -> (CalibrationState, PoseBuffer, FeatureObservation) {
    loop {
        let buf = random_buffer(rng);
        let (a, b) = buf.span().expect("non-empty buffer");
        let tau = rng.random_range(a..b);
        if buf
            .samples()
            .iter()
            .any(|s| (s.t - tau).abs() < BOUNDARY_GUARD)
        {
            continue;
        }
        let line = PluckerLine::from_point_dir(
            &uniform_vec(rng, -1000.0, 1000.0),
            &uniform_vec(rng, -1.0, 1.0),
        );
        let Ok(line) = line else { continue };
        let hand_eye = Pose::new(
            rot_exp(&uniform_vec(rng, -1.5, 1.5)),
            uniform_vec(rng, -200.0, 200.0),
        );
        let t_d = rng.random_range(-0.05..0.05);
        let state = CalibrationState::new(t_d, line.to_orthonormal(), hand_eye);
        let p_cam = Vec3::new(
            rng.random_range(-50.0..50.0),
            rng.random_range(-5.0..5.0),
            rng.random_range(100.0..400.0),
        );
        return (state, buf, FeatureObservation::new(tau + t_d, p_cam));
    }
}

/// Compare analytic and numeric Jacobians over `opts.cases` random cases.
pub fn run_jacobian_check(opts: &CheckOptions) -> CheckReport {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut worst = [0.0f64; 4];
    for _ in 0..opts.cases {
        let (state, buf, obs) = random_case(&mut rng);
        let mut analytic = evaluate(&state, &buf, &obs)
            .expect("case lies inside the buffer")
            .jac;
        if opts.flip_td_sign {
            let col = -analytic.column(COL_TD);
            analytic.set_column(COL_TD, &col);
        }
        let numeric =
            numeric_jacobian(&state, &buf, &obs, opts.step).expect("case lies inside the buffer");
        for (slot, &(_, start, width)) in BLOCKS.iter().enumerate() {
            for k in start..start + width {
                worst[slot] = worst[slot].max(column_error(&analytic, &numeric, k));
            }
        }
    }
    CheckReport {
        blocks: BLOCKS
            .iter()
            .zip(worst)
            .map(|(&(name, _, _), max_rel_error)| BlockError {
                name,
                max_rel_error,
            })
            .collect(),
        cases: opts.cases,
        tolerance: opts.tolerance,
    }
}
