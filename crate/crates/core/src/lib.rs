//! Joint calibration of camera time-offset, hand-eye transform and a scanned
//! straight line for robot-mounted laser vision sensors.
//!
//! The crate is organized bottom-up:
//!
//! - [`liegeo`]: SO(3) helpers, Plücker and orthonormal line forms.
//! - [`trajectory`]: timestamped pose buffer with constant-twist interpolation.
//! - [`residual`]: measurement model, point-to-line residual, analytic Jacobians.
//! - [`solver`]: Huber-weighted Levenberg-Marquardt and line initialization.
//! - [`synth`]: S-path scenario generator with known ground truth.
//! - [`check`]: numeric Jacobian verification.
//! - [`io`]: CSV/JSON dataset and report formats.
//! - [`cli`]: the `lvscal` command-line front end.

// Comparisons are written as `!(x <= limit)` so NaN falls on the failing side.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod check;
pub mod cli;
pub mod io;
pub mod liegeo;
pub mod residual;
pub mod solver;
pub mod synth;
pub mod trajectory;

pub use liegeo::{
    from_orthonormal, point_line_error, rot_exp, rot_log, skew, to_orthonormal, OrthonormalLine,
    PluckerLine, Pose, Rotation, Vec3,
};
pub use residual::{
    evaluate, map_feature_to_base, CalibrationState, FeatureObservation, ResidualBlock,
};
pub use solver::{calibrate, init_line, CalibrationReport, Dataset, SolverError, SolverOptions};
pub use synth::{synthesize, ScenarioConfig, SynthDataset};
pub use trajectory::{PoseBuffer, TimedPose, Twist};
