//! Robust Levenberg-Marquardt over `ℝ × (SO(3) × ℝ) × ℝ³ × SO(3)`.
//!
//! Each iteration stacks the Huber-weighted residual blocks of every
//! observation whose shifted timestamp `t − t_d` lies inside the pose buffer,
//! solves the damped normal equations
//!
//! ```text
//! δx = −(JᵀWJ + μI)⁻¹ JᵀW r
//! ```
//!
//! and applies the step through [`CalibrationState::retract`]. Steps that do
//! not lower the robust cost are rejected and the damping is raised.

use nalgebra::{Cholesky, Matrix3, SMatrix, SVector};
use rayon::prelude::*;
use thiserror::Error;

use crate::liegeo::{renormalize, rot_exp, OrthonormalLine, PluckerLine, Pose, Vec3};
use crate::residual::{
    evaluate, map_feature_to_base, CalibrationState, FeatureObservation, StateVector, COL_LINE,
    COL_ROT, COL_TD, COL_TRANS, STATE_DIM,
};
use crate::trajectory::{PoseBuffer, TrajectoryError};

/// Damped systems with a pivot-ratio condition estimate above this are singular.
pub const SINGULAR_CONDITION: f64 = 1e14;
/// Undamped normal matrices above this raise the observability warning.
pub const WARN_CONDITION: f64 = 1e10;
/// Damping beyond this ends the solve.
pub const MAX_DAMPING: f64 = 1e12;
/// Minimum ratio of the two largest singular values of the initial point cloud.
pub const LINE_FIT_MIN_RATIO: f64 = 1.01;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SolverError {
    #[error("insufficient data: {rows} residual rows retained, need at least {STATE_DIM}")]
    InsufficientData { rows: usize },
    #[error("damped normal equations are numerically singular (condition {condition:e})")]
    SingularSystem { condition: f64 },
    #[error("point cloud has no dominant direction (singular value ratio {ratio:.4})")]
    DegenerateCloud { ratio: f64 },
    #[error(transparent)]
    Trajectory(#[from] TrajectoryError),
}

/// Solver tuning. All values must be positive and `mu_up > 1 > mu_down`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverOptions {
    /// Huber threshold (millimeters).
    pub huber_delta: f64,
    pub mu0: f64,
    pub mu_up: f64,
    pub mu_down: f64,
    /// Stop when `‖δx‖` drops below this.
    pub eps: f64,
    pub max_iters: usize,
    /// `|t_d|` is clamped to this window (seconds).
    pub td_window: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            huber_delta: 1.0,
            mu0: 1e-4,
            mu_up: 10.0,
            mu_down: 0.1,
            eps: 1e-8,
            max_iters: 100,
            td_window: 0.2,
        }
    }
}

impl SolverOptions {
    pub fn validate(&self) -> Result<(), String> {
        let positive = [
            ("huber_delta", self.huber_delta),
            ("mu0", self.mu0),
            ("mu_up", self.mu_up),
            ("mu_down", self.mu_down),
            ("eps", self.eps),
            ("td_window", self.td_window),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(format!("{name} must be positive and finite, got {v}"));
            }
        }
        if self.max_iters == 0 {
            return Err("max_iters must be positive".into());
        }
        if !(self.mu_up > 1.0 && self.mu_down < 1.0) {
            return Err("damping factors need mu_up > 1 > mu_down".into());
        }
        Ok(())
    }
}

/// Pose stream plus time-sorted feature observations.
#[derive(Debug, Clone, Default)]
pub struct Dataset {
    pub poses: PoseBuffer,
    pub features: Vec<FeatureObservation>,
}

impl Dataset {
    /// Features are sorted by timestamp so the normal-equation reduction
    /// order is fixed.
    pub fn new(poses: PoseBuffer, mut features: Vec<FeatureObservation>) -> Self {
        features.sort_by(|a, b| a.t.total_cmp(&b.t));
        Self { poses, features }
    }
}

/// IRLS weight of the Huber loss: `1` inside the knee, `δ/|r|` outside.
pub fn huber_weight(rnorm: f64, delta: f64) -> f64 {
    if rnorm <= delta {
        1.0
    } else {
        delta / rnorm
    }
}

/// Huber loss `ρ(e)`: `e²/2` inside the knee, `δ(e − δ/2)` outside.
pub fn huber_cost(rnorm: f64, delta: f64) -> f64 {
    if rnorm <= delta {
        0.5 * rnorm * rnorm
    } else {
        delta * (rnorm - 0.5 * delta)
    }
}

impl CalibrationState {
    /// Apply a tangent increment `[δt_d, δω, δm, δP, δφ]`.
    ///
    /// `t_d` is clamped to `±td_window`. A negative `m` after the update is
    /// folded back by flipping `u2`, `u3`.
    pub fn retract(&self, delta: &StateVector, td_window: f64) -> CalibrationState {
        let d_omega = Vec3::new(delta[COL_LINE], delta[COL_LINE + 1], delta[COL_LINE + 2]);
        let d_trans = Vec3::new(delta[COL_TRANS], delta[COL_TRANS + 1], delta[COL_TRANS + 2]);
        let d_rot = Vec3::new(delta[COL_ROT], delta[COL_ROT + 1], delta[COL_ROT + 2]);

        let u = renormalize(&(rot_exp(&d_omega) * self.line.basis()));
        let line = OrthonormalLine::from_basis(&u, self.line.m + delta[COL_LINE + 3]);
        let he_rot = renormalize(&(rot_exp(&d_rot) * self.hand_eye.rotation));
        CalibrationState {
            t_d: (self.t_d + delta[COL_TD]).clamp(-td_window, td_window),
            line,
            hand_eye: Pose::new(he_rot, self.hand_eye.translation + d_trans),
        }
    }
}

/// Weighted normal equations accumulated at one state.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalEquations {
    pub hessian: SMatrix<f64, STATE_DIM, STATE_DIM>,
    pub gradient: StateVector,
    /// Robust cost `Σ ρ(|r_i|)`.
    pub cost: f64,
    pub retained: usize,
    pub dropped: usize,
    sum_sq: f64,
    sum_abs: f64,
}

impl NormalEquations {
    pub fn assemble(state: &CalibrationState, data: &Dataset, huber_delta: f64) -> Self {
        let blocks: Vec<_> = data
            .features
            .par_iter()
            .map(|obs| evaluate(state, &data.poses, obs).ok())
            .collect();

        let mut ne = NormalEquations {
            hessian: SMatrix::zeros(),
            gradient: SVector::zeros(),
            cost: 0.0,
            retained: 0,
            dropped: 0,
            sum_sq: 0.0,
            sum_abs: 0.0,
        };
        for block in blocks {
            let Some(block) = block else {
                ne.dropped += 1;
                continue;
            };
            let e = block.r.norm();
            let w = huber_weight(e, huber_delta);
            let jt = block.jac.transpose();
            ne.hessian += jt * block.jac * w;
            ne.gradient += jt * block.r * w;
            ne.cost += huber_cost(e, huber_delta);
            ne.sum_sq += e * e;
            ne.sum_abs += e;
            ne.retained += 1;
        }
        ne
    }

    pub fn rows(&self) -> usize {
        3 * self.retained
    }

    /// RMS of the residual norms (millimeters).
    pub fn rmse(&self) -> f64 {
        if self.retained == 0 {
            0.0
        } else {
            (self.sum_sq / self.retained as f64).sqrt()
        }
    }

    /// Mean of the residual norms (millimeters).
    pub fn mae(&self) -> f64 {
        if self.retained == 0 {
            0.0
        } else {
            self.sum_abs / self.retained as f64
        }
    }

    /// Cost predicted by the local quadratic model after step `delta`.
    pub fn predicted_cost(&self, delta: &StateVector) -> f64 {
        self.cost + self.gradient.dot(delta) + 0.5 * delta.dot(&(self.hessian * delta))
    }
}

/// Solution of a damped system and the conditioning of its matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct DampedSolve<const N: usize> {
    pub delta: SVector<f64, N>,
    pub condition: f64,
}

/// Ratio of the extreme squared pivots of the Cholesky factor;
/// infinite when the factorization fails.
pub fn pivot_condition<const N: usize>(a: &SMatrix<f64, N, N>) -> f64 {
    match Cholesky::new(*a) {
        Some(chol) => pivot_ratio(&chol),
        None => f64::INFINITY,
    }
}

fn pivot_ratio<const N: usize>(chol: &Cholesky<f64, nalgebra::Const<N>>) -> f64 {
    let l = chol.l_dirty();
    let (mut lo, mut hi) = (f64::INFINITY, 0.0f64);
    for i in 0..N {
        let p = l[(i, i)] * l[(i, i)];
        lo = lo.min(p);
        hi = hi.max(p);
    }
    if lo > 0.0 {
        hi / lo
    } else {
        f64::INFINITY
    }
}

/// Solve `(H + μI) δ = −g`.
pub fn solve_damped<const N: usize>(
    hessian: &SMatrix<f64, N, N>,
    gradient: &SVector<f64, N>,
    mu: f64,
) -> Result<DampedSolve<N>, SolverError> {
    let a = hessian + SMatrix::<f64, N, N>::identity() * mu;
    if a.iter().any(|x| !x.is_finite()) {
        return Err(SolverError::SingularSystem {
            condition: f64::INFINITY,
        });
    }
    let chol = Cholesky::new(a).ok_or(SolverError::SingularSystem {
        condition: f64::INFINITY,
    })?;
    let condition = pivot_ratio(&chol);
    if !(condition <= SINGULAR_CONDITION) {
        return Err(SolverError::SingularSystem { condition });
    }
    Ok(DampedSolve {
        delta: -chol.solve(gradient),
        condition,
    })
}

/// One damped Gauss-Newton step at `state`.
#[derive(Debug, Clone, PartialEq)]
pub struct LmStep {
    pub delta: StateVector,
    pub predicted_cost: f64,
    pub condition: f64,
}

pub fn lm_step(
    state: &CalibrationState,
    data: &Dataset,
    huber_delta: f64,
    mu: f64,
) -> Result<LmStep, SolverError> {
    let ne = NormalEquations::assemble(state, data, huber_delta);
    if ne.rows() < STATE_DIM {
        return Err(SolverError::InsufficientData { rows: ne.rows() });
    }
    let solve = solve_damped(&ne.hessian, &ne.gradient, mu)?;
    Ok(LmStep {
        predicted_cost: ne.predicted_cost(&solve.delta),
        delta: solve.delta,
        condition: solve.condition,
    })
}

/// Fit a line through features mapped with `t_d = 0` and the given hand-eye.
///
/// The line passes through the centroid along the dominant principal
/// direction of the scatter.
pub fn init_line(
    features: &[FeatureObservation],
    poses: &PoseBuffer,
    hand_eye: &Pose,
) -> Result<OrthonormalLine, SolverError> {
    let points: Vec<Vec3> = features
        .iter()
        .filter_map(|f| {
            let pose = poses.interpolate(f.t).ok()?;
            Some(pose.transform_point(&hand_eye.transform_point(&f.p_cam)))
        })
        .collect();
    if points.len() < 2 {
        return Err(SolverError::InsufficientData {
            rows: 3 * points.len(),
        });
    }
    let centroid = points.iter().sum::<Vec3>() / points.len() as f64;
    let scatter = points
        .iter()
        .map(|p| (p - centroid) * (p - centroid).transpose())
        .sum::<Matrix3<f64>>();
    let eig = scatter.symmetric_eigen();
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let s1 = eig.eigenvalues[order[0]].max(0.0).sqrt();
    let s2 = eig.eigenvalues[order[1]].max(0.0).sqrt();
    let ratio = if s2 > 0.0 { s1 / s2 } else { f64::INFINITY };
    if !(ratio >= LINE_FIT_MIN_RATIO) {
        return Err(SolverError::DegenerateCloud { ratio });
    }
    let dir: Vec3 = eig.eigenvectors.column(order[0]).into_owned();
    let line = PluckerLine::from_point_dir(&centroid, &dir)
        .map_err(|_| SolverError::DegenerateCloud { ratio })?;
    Ok(line.to_orthonormal())
}

/// One LM attempt.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IterationRecord {
    pub iter: usize,
    /// RMS residual norm of the current (accepted) state, millimeters.
    pub rmse: f64,
    pub t_d: f64,
    pub cost: f64,
    /// Damping used for this attempt.
    pub mu: f64,
    pub accepted: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationReport {
    pub state: CalibrationState,
    pub line: PluckerLine,
    /// Entry 0 is the initial state; later entries are LM attempts.
    pub history: Vec<IterationRecord>,
    pub rmse: f64,
    pub mae: f64,
    pub cost: f64,
    pub converged: bool,
    /// Number of LM attempts made.
    pub iterations: usize,
    pub dropped_observations: usize,
    /// Pivot-ratio condition estimate of the undamped normal matrix.
    pub condition: f64,
    pub condition_warning: bool,
}

/// Run Levenberg-Marquardt from `init`.
pub fn calibrate(
    data: &Dataset,
    init: &CalibrationState,
    opts: &SolverOptions,
) -> Result<CalibrationReport, SolverError> {
    let mut state = *init;
    state.t_d = state.t_d.clamp(-opts.td_window, opts.td_window);
    let mut ne = NormalEquations::assemble(&state, data, opts.huber_delta);
    if ne.rows() < STATE_DIM {
        return Err(SolverError::InsufficientData { rows: ne.rows() });
    }

    let mut mu = opts.mu0;
    let mut converged = false;
    let mut iterations = 0;
    let mut history = vec![IterationRecord {
        iter: 0,
        rmse: ne.rmse(),
        t_d: state.t_d,
        cost: ne.cost,
        mu,
        accepted: true,
    }];

    for iter in 1..=opts.max_iters {
        iterations = iter;
        let mut accepted = false;
        let step_mu = mu;
        match solve_damped(&ne.hessian, &ne.gradient, mu) {
            Ok(step) if step.delta.norm() < opts.eps => {
                converged = true;
            }
            Ok(step) => {
                let candidate = state.retract(&step.delta, opts.td_window);
                let cand_ne = NormalEquations::assemble(&candidate, data, opts.huber_delta);
                if cand_ne.rows() >= STATE_DIM && cand_ne.cost < ne.cost {
                    state = candidate;
                    ne = cand_ne;
                    mu *= opts.mu_down;
                    accepted = true;
                } else {
                    mu *= opts.mu_up;
                }
            }
            Err(SolverError::SingularSystem { condition }) => {
                mu *= opts.mu_up;
                if mu > MAX_DAMPING {
                    return Err(SolverError::SingularSystem { condition });
                }
            }
            Err(e) => return Err(e),
        }
        history.push(IterationRecord {
            iter,
            rmse: ne.rmse(),
            t_d: state.t_d,
            cost: ne.cost,
            mu: step_mu,
            accepted,
        });
        if converged || mu > MAX_DAMPING {
            break;
        }
    }

    let condition = pivot_condition(&ne.hessian);
    Ok(CalibrationReport {
        line: state.plucker(),
        state,
        history,
        rmse: ne.rmse(),
        mae: ne.mae(),
        cost: ne.cost,
        converged,
        iterations,
        dropped_observations: ne.dropped,
        condition,
        condition_warning: !(condition <= WARN_CONDITION),
    })
}

/// Initial state following the usual protocol: given `t_d` and hand-eye,
/// line from [`init_line`].
pub fn initial_state(
    data: &Dataset,
    hand_eye: Pose,
    t_d: f64,
) -> Result<CalibrationState, SolverError> {
    let usable = data
        .features
        .iter()
        .filter(|f| data.poses.contains(f.t - t_d))
        .count();
    if 3 * usable < STATE_DIM {
        return Err(SolverError::InsufficientData { rows: 3 * usable });
    }
    let line = init_line(&data.features, &data.poses, &hand_eye)?;
    Ok(CalibrationState::new(t_d, line, hand_eye))
}

/// Point-to-line error statistics of mapped features (millimeters).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PositionErrors {
    pub rmse: f64,
    pub mae: f64,
    pub count: usize,
}

/// Map every feature with `state` and measure its distance to `reference`.
///
/// Used to compare temporal models: the same hand-eye with different `t_d`
/// values against a known line.
pub fn position_errors(
    data: &Dataset,
    state: &CalibrationState,
    reference: &PluckerLine,
) -> PositionErrors {
    let dists: Vec<f64> = data
        .features
        .iter()
        .filter_map(|f| map_feature_to_base(state, &data.poses, f).ok())
        .map(|p| reference.distance(&p))
        .collect();
    let count = dists.len();
    if count == 0 {
        return PositionErrors {
            rmse: f64::NAN,
            mae: f64::NAN,
            count,
        };
    }
    let n = count as f64;
    PositionErrors {
        rmse: (dists.iter().map(|d| d * d).sum::<f64>() / n).sqrt(),
        mae: dists.iter().sum::<f64>() / n,
        count,
    }
}
