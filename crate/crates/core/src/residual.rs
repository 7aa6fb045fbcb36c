//! Measurement model and point-to-line residual with analytic Jacobians.
//!
//! A feature `p_cam` stamped `t` is mapped into the base frame with the robot
//! pose interpolated at `t − t_d`:
//!
//! ```text
//! P_b = R_BE(t − t_d) · (R_EC · p_cam + P_EC) + P_BE(t − t_d)
//! r   = P_b × v − n
//! ```
//!
//! Jacobian columns are laid out as `[t_d | δω δm | δP_EC | δR_EC]` and use
//! the retraction `U' = Exp(δω)·U`, `R_EC' = Exp(δ)·R_EC` (left
//! perturbations), additive on `m`, `t_d` and `P_EC`.

use nalgebra::{SMatrix, SVector};

use crate::liegeo::{skew, OrthonormalLine, PluckerLine, Pose, Vec3};
use crate::trajectory::{PoseBuffer, TrajectoryError};

pub const STATE_DIM: usize = 11;
pub const COL_TD: usize = 0;
pub const COL_LINE: usize = 1;
pub const COL_TRANS: usize = 5;
pub const COL_ROT: usize = 8;

pub type StateVector = SVector<f64, STATE_DIM>;
pub type StateJacobian = SMatrix<f64, 3, STATE_DIM>;

/// Weld feature point in the camera frame (millimeters), stamped with the
/// camera receipt time (seconds).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FeatureObservation {
    pub t: f64,
    pub p_cam: Vec3,
}

impl FeatureObservation {
    pub fn new(t: f64, p_cam: Vec3) -> Self {
        Self { t, p_cam }
    }
}

/// Estimated quantities: time-offset, line and hand-eye transform.
///
/// `t_d > 0` means the camera stream lags the robot stream: an image stamped
/// `t` was taken at robot time `t − t_d`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CalibrationState {
    pub t_d: f64,
    pub line: OrthonormalLine,
    /// Camera pose in the end-effector frame (`E_T_C`).
    pub hand_eye: Pose,
}

impl CalibrationState {
    pub fn new(t_d: f64, line: OrthonormalLine, hand_eye: Pose) -> Self {
        Self {
            t_d,
            line,
            hand_eye,
        }
    }

    pub fn plucker(&self) -> PluckerLine {
        self.line.to_plucker()
    }
}

/// Residual vector and its 3×11 Jacobian.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ResidualBlock {
    pub r: Vec3,
    pub jac: StateJacobian,
}

/// Feature position in the base frame at the current state.
pub fn map_feature_to_base(
    state: &CalibrationState,
    buf: &PoseBuffer,
    obs: &FeatureObservation,
) -> Result<Vec3, TrajectoryError> {
    let pose = buf.interpolate(obs.t - state.t_d)?;
    Ok(pose.transform_point(&state.hand_eye.transform_point(&obs.p_cam)))
}

/// The `t_d` column split into its rotational and translational parts.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeOffsetColumn {
    pub rotational: Vec3,
    pub translational: Vec3,
}

impl TimeOffsetColumn {
    pub fn total(&self) -> Vec3 {
        self.rotational + self.translational
    }
}

struct Chain {
    rot_be: nalgebra::Matrix3<f64>,
    /// `R_EC · p_cam`
    q_cam: Vec3,
    p_base: Vec3,
    td: TimeOffsetColumn,
}

fn chain(
    state: &CalibrationState,
    buf: &PoseBuffer,
    obs: &FeatureObservation,
    v: &Vec3,
) -> Result<Chain, TrajectoryError> {
    let it = buf.interpolate_full(obs.t - state.t_d)?;
    let rot_be = *it.pose.rotation.matrix();
    let q_cam = state.hand_eye.rotation * obs.p_cam;
    let lever = rot_be * (q_cam + state.hand_eye.translation);
    let p_base = lever + it.pose.translation;

    // ∂R/∂t_d as a base-frame tangent is −R_j ω; ∂P/∂t_d is −v_E.
    let spin = -(buf.anchor_rotation(it.anchor) * it.twist.omega);
    let td = TimeOffsetColumn {
        rotational: spin.cross(&lever).cross(v),
        translational: (-it.twist.vel).cross(v),
    };
    Ok(Chain {
        rot_be,
        q_cam,
        p_base,
        td,
    })
}

/// Decomposed `∂r/∂t_d`.
pub fn time_offset_column(
    state: &CalibrationState,
    buf: &PoseBuffer,
    obs: &FeatureObservation,
) -> Result<TimeOffsetColumn, TrajectoryError> {
    let v = state.plucker().v;
    Ok(chain(state, buf, obs, &v)?.td)
}

/// Residual and full Jacobian for one observation.
pub fn evaluate(
    state: &CalibrationState,
    buf: &PoseBuffer,
    obs: &FeatureObservation,
) -> Result<ResidualBlock, TrajectoryError> {
    let u = *state.line.basis().matrix();
    let v: Vec3 = u.column(0).into_owned();
    let u2: Vec3 = u.column(1).into_owned();
    let m = state.line.m;
    let n = u2 * m;

    let c = chain(state, buf, obs, &v)?;
    let r = c.p_base.cross(&v) - n;

    let neg_v = -skew(&v); // ∂r/∂P_b
    let mut jac = StateJacobian::zeros();
    jac.set_column(COL_TD, &c.td.total());
    jac.fixed_view_mut::<3, 3>(0, COL_LINE)
        .copy_from(&(-skew(&c.p_base) * skew(&v) + skew(&u2) * m));
    jac.set_column(COL_LINE + 3, &(-u2));
    jac.fixed_view_mut::<3, 3>(0, COL_TRANS)
        .copy_from(&(neg_v * c.rot_be));
    jac.fixed_view_mut::<3, 3>(0, COL_ROT)
        .copy_from(&(skew(&v) * c.rot_be * skew(&c.q_cam)));

    Ok(ResidualBlock { r, jac })
}

/// Residual only, computed through the plain mapping and point-line error.
pub fn residual(
    state: &CalibrationState,
    buf: &PoseBuffer,
    obs: &FeatureObservation,
) -> Result<Vec3, TrajectoryError> {
    let p = map_feature_to_base(state, buf, obs)?;
    Ok(crate::liegeo::point_line_error(&p, &state.plucker()))
}
