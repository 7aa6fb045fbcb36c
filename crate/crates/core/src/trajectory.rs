//! Timestamped robot pose buffer with constant-twist interpolation.
//!
//! Between two consecutive samples `t_j ≤ τ < t_{j+1}` the end-effector is
//! assumed to move with constant body angular velocity and constant linear
//! velocity:
//!
//! ```text
//! ω = Log(R_jᵀ R_{j+1}) / Δt        v = (P_{j+1} − P_j) / Δt
//! R(τ) = R_j Exp(ω (τ − t_j))        P(τ) = P_j + v (τ − t_j)
//! ```
//!
//! Queries outside `[first, last]` are errors; there is no extrapolation.

use nalgebra::Matrix3;
use thiserror::Error;

use crate::liegeo::{rot_exp, rot_log, skew, Pose, Vec3};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TrajectoryError {
    #[error("non-monotonic timestamp: {got} does not follow {prev}")]
    NonMonotonicTimestamp { prev: f64, got: f64 },
    #[error("query time {t} outside pose buffer span [{first}, {last}]")]
    OutOfRange { t: f64, first: f64, last: f64 },
    #[error("pose buffer needs at least 2 samples, has {0}")]
    TooFewSamples(usize),
    #[error("non-finite timestamp or pose")]
    NonFinite,
}

/// End-effector pose in the base frame at time `t` (seconds).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimedPose {
    pub t: f64,
    pub pose: Pose,
}

impl TimedPose {
    pub fn new(t: f64, pose: Pose) -> Self {
        Self { t, pose }
    }
}

/// Body-frame angular velocity (rad/s) and base-frame linear velocity (mm/s).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Twist {
    pub omega: Vec3,
    pub vel: Vec3,
}

/// Derivatives of the interpolated pose at `t − t_d` with respect to `t_d`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeJacobian {
    /// `∂R/∂t_d` as a 3×3 matrix, equal to `−R(τ)[ω]×`.
    pub d_rot: Matrix3<f64>,
    /// The same derivative as a left (base-frame) tangent vector: `−R_j ω`.
    pub d_rot_spatial: Vec3,
    /// `∂P/∂t_d = −v`.
    pub d_pos: Vec3,
}

/// Interpolated pose together with the twist and bracket it came from.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Interpolated {
    pub pose: Pose,
    pub twist: Twist,
    pub anchor: usize,
}

/// Ordered pose samples with strictly increasing timestamps.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PoseBuffer {
    samples: Vec<TimedPose>,
}

fn pose_is_finite(p: &Pose) -> bool {
    p.rotation.matrix().iter().all(|x| x.is_finite()) && p.translation.iter().all(|x| x.is_finite())
}

impl PoseBuffer {
    pub fn new() -> Self {
        Self::default()
    }

    /// Build from samples that must already be strictly increasing in time.
    pub fn from_samples(samples: Vec<TimedPose>) -> Result<Self, TrajectoryError> {
        let mut buf = Self {
            samples: Vec::with_capacity(samples.len()),
        };
        for s in samples {
            buf.insert(s)?;
        }
        Ok(buf)
    }

    /// Append a sample; its timestamp must exceed the last one.
    pub fn insert(&mut self, tp: TimedPose) -> Result<(), TrajectoryError> {
        if !tp.t.is_finite() || !pose_is_finite(&tp.pose) {
            return Err(TrajectoryError::NonFinite);
        }
        if let Some(last) = self.samples.last() {
            if tp.t <= last.t {
                return Err(TrajectoryError::NonMonotonicTimestamp {
                    prev: last.t,
                    got: tp.t,
                });
            }
        }
        self.samples.push(tp);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn samples(&self) -> &[TimedPose] {
        &self.samples
    }

    /// `(first, last)` timestamps.
    pub fn span(&self) -> Option<(f64, f64)> {
        Some((self.samples.first()?.t, self.samples.last()?.t))
    }

    pub fn contains(&self, t: f64) -> bool {
        self.len() >= 2 && self.span().is_some_and(|(a, b)| t >= a && t <= b)
    }

    /// Index `j` with `t_j ≤ t < t_{j+1}`; `t = last` maps to the final interval.
    fn bracket(&self, t: f64) -> Result<usize, TrajectoryError> {
        let n = self.samples.len();
        if n < 2 {
            return Err(TrajectoryError::TooFewSamples(n));
        }
        let (first, last) = (self.samples[0].t, self.samples[n - 1].t);
        if !(t >= first && t <= last) {
            return Err(TrajectoryError::OutOfRange { t, first, last });
        }
        let idx = self.samples.partition_point(|s| s.t <= t);
        Ok(idx.saturating_sub(1).min(n - 2))
    }

    fn twist_of(&self, j: usize) -> Twist {
        let (a, b) = (&self.samples[j], &self.samples[j + 1]);
        let dt = b.t - a.t;
        let rel = a.pose.rotation.transpose() * b.pose.rotation;
        Twist {
            omega: rot_log(&rel) / dt,
            vel: (b.pose.translation - a.pose.translation) / dt,
        }
    }

    /// Finite-difference twist of the interval bracketing `t`.
    pub fn velocity_at(&self, t: f64) -> Result<Twist, TrajectoryError> {
        Ok(self.twist_of(self.bracket(t)?))
    }

    pub(crate) fn interpolate_full(&self, tq: f64) -> Result<Interpolated, TrajectoryError> {
        let j = self.bracket(tq)?;
        let twist = self.twist_of(j);
        let last = self.samples.len() - 1;
        let pose = if tq == self.samples[last].t {
            self.samples[last].pose
        } else {
            let a = &self.samples[j];
            let s = tq - a.t;
            Pose::new(
                a.pose.rotation * rot_exp(&(twist.omega * s)),
                a.pose.translation + twist.vel * s,
            )
        };
        Ok(Interpolated {
            pose,
            twist,
            anchor: j,
        })
    }

    /// Pose at `tq` under the constant-twist model.
    pub fn interpolate(&self, tq: f64) -> Result<Pose, TrajectoryError> {
        Ok(self.interpolate_full(tq)?.pose)
    }

    pub(crate) fn anchor_rotation(&self, j: usize) -> &crate::liegeo::Rotation {
        &self.samples[j].pose.rotation
    }

    /// Derivatives of the pose interpolated at `t − t_d` with respect to `t_d`.
    pub fn time_jacobian(&self, t: f64, t_d: f64) -> Result<TimeJacobian, TrajectoryError> {
        let it = self.interpolate_full(t - t_d)?;
        let omega = it.twist.omega;
        Ok(TimeJacobian {
            d_rot: -(it.pose.rotation.matrix() * skew(&omega)),
            d_rot_spatial: -(self.anchor_rotation(it.anchor) * omega),
            d_pos: -it.twist.vel,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::liegeo::Rotation;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::{FRAC_PI_2, FRAC_PI_4};

    fn tp(t: f64, w: Vec3, p: Vec3) -> TimedPose {
        TimedPose::new(t, Pose::new(rot_exp(&w), p))
    }

    fn random_buffer(rng: &mut ChaCha8Rng, n: usize) -> PoseBuffer {
        let mut buf = PoseBuffer::new();
        let mut t = 0.0;
        let mut r = rot_exp(&Vec3::new(0.3, -0.2, 1.0));
        let mut p = Vec3::new(800.0, 100.0, 300.0);
        for _ in 0..n {
            buf.insert(TimedPose::new(t, Pose::new(r, p))).unwrap();
            t += rng.random_range(0.003..0.2);
            let dw = Vec3::new(
                rng.random_range(-0.3..0.3),
                rng.random_range(-0.3..0.3),
                rng.random_range(-0.3..0.3),
            );
            r *= rot_exp(&dw);
            p += Vec3::new(
                rng.random_range(-20.0..20.0),
                rng.random_range(-20.0..20.0),
                rng.random_range(-20.0..20.0),
            );
        }
        buf
    }

    #[test]
    fn insert_contract() {
        let mut buf = PoseBuffer::new();
        buf.insert(TimedPose::new(0.0, Pose::identity())).unwrap();
        assert_eq!(buf.len(), 1);
        buf.insert(TimedPose::new(0.004, Pose::identity())).unwrap();
        assert_eq!(buf.len(), 2);
        assert!(buf.samples()[0].t < buf.samples()[1].t);
        assert!(matches!(
            buf.insert(TimedPose::new(0.0, Pose::identity())),
            Err(TrajectoryError::NonMonotonicTimestamp { .. })
        ));
        assert!(matches!(
            buf.insert(TimedPose::new(0.004, Pose::identity())),
            Err(TrajectoryError::NonMonotonicTimestamp { .. })
        ));
        assert_eq!(
            buf.insert(TimedPose::new(f64::NAN, Pose::identity())),
            Err(TrajectoryError::NonFinite)
        );
    }

    #[test]
    fn queries_need_two_samples_and_stay_in_range() {
        let mut buf = PoseBuffer::new();
        buf.insert(TimedPose::new(0.0, Pose::identity())).unwrap();
        assert_eq!(buf.interpolate(0.0), Err(TrajectoryError::TooFewSamples(1)));
        buf.insert(TimedPose::new(1.0, Pose::identity())).unwrap();
        assert!(matches!(
            buf.interpolate(-1e-9),
            Err(TrajectoryError::OutOfRange { .. })
        ));
        assert!(matches!(
            buf.interpolate(1.0 + 1e-9),
            Err(TrajectoryError::OutOfRange { .. })
        ));
        assert!(matches!(
            buf.velocity_at(2.0),
            Err(TrajectoryError::OutOfRange { .. })
        ));
        assert!(matches!(
            buf.time_jacobian(0.5, -0.6),
            Err(TrajectoryError::OutOfRange { .. })
        ));
        assert!(buf.interpolate(1.0).is_ok());
    }

    #[test]
    fn velocity_cases() {
        let buf = PoseBuffer::from_samples(vec![
            tp(0.0, Vec3::zeros(), Vec3::new(1.0, 2.0, 3.0)),
            tp(0.1, Vec3::zeros(), Vec3::new(1.0, 2.0, 3.0)),
        ])
        .unwrap();
        let tw = buf.velocity_at(0.05).unwrap();
        assert_eq!(tw.omega, Vec3::zeros());
        assert_eq!(tw.vel, Vec3::zeros());

        let buf = PoseBuffer::from_samples(vec![
            tp(0.0, Vec3::zeros(), Vec3::zeros()),
            tp(0.1, Vec3::zeros(), Vec3::new(10.0, 0.0, 0.0)),
        ])
        .unwrap();
        let tw = buf.velocity_at(0.02).unwrap();
        assert!((tw.vel - Vec3::new(100.0, 0.0, 0.0)).norm() < 1e-12);
        assert_eq!(tw.omega, Vec3::zeros());

        let buf = PoseBuffer::from_samples(vec![
            tp(0.0, Vec3::zeros(), Vec3::zeros()),
            tp(1.0, Vec3::new(0.0, 0.0, FRAC_PI_2), Vec3::zeros()),
        ])
        .unwrap();
        let tw = buf.velocity_at(0.3).unwrap();
        assert!((tw.omega - Vec3::new(0.0, 0.0, FRAC_PI_2)).norm() < 1e-12);
    }

    #[test]
    fn interpolate_endpoints_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let buf = random_buffer(&mut rng, 20);
        for s in buf.samples() {
            assert_eq!(buf.interpolate(s.t).unwrap(), s.pose);
        }
    }

    #[test]
    fn interpolate_midpoints() {
        let buf = PoseBuffer::from_samples(vec![
            tp(0.0, Vec3::zeros(), Vec3::new(0.0, 4.0, 0.0)),
            tp(2.0, Vec3::zeros(), Vec3::new(10.0, -2.0, 6.0)),
        ])
        .unwrap();
        assert!(
            (buf.interpolate(1.0).unwrap().translation - Vec3::new(5.0, 1.0, 3.0)).norm() < 1e-12
        );

        let axis = Vec3::new(1.0, -2.0, 0.5).normalize();
        let r0 = rot_exp(&Vec3::new(0.4, 0.1, -0.7));
        let buf = PoseBuffer::from_samples(vec![
            TimedPose::new(0.0, Pose::new(r0, Vec3::zeros())),
            TimedPose::new(
                1.0,
                Pose::new(r0 * rot_exp(&(axis * FRAC_PI_2)), Vec3::zeros()),
            ),
        ])
        .unwrap();
        let mid = buf.interpolate(0.5).unwrap().rotation;
        let expect: Rotation =
            r0 * Rotation::from_axis_angle(&nalgebra::Unit::new_normalize(axis), FRAC_PI_4);
        assert!((mid.matrix() - expect.matrix()).norm() < 1e-9);
    }

    #[test]
    fn interpolated_rotation_stays_orthonormal() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let buf = random_buffer(&mut rng, 30);
        let (a, b) = buf.span().unwrap();
        for _ in 0..100 {
            let m = *buf
                .interpolate(rng.random_range(a..b))
                .unwrap()
                .rotation
                .matrix();
            assert!((m.transpose() * m - Matrix3::identity()).norm() < 1e-9);
            assert!((m.determinant() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn reproduces_constant_twist_motion() {
        let r0 = rot_exp(&Vec3::new(-0.2, 0.5, 0.1));
        let p0 = Vec3::new(100.0, -50.0, 400.0);
        let w = Vec3::new(0.3, -0.1, 0.45);
        let v = Vec3::new(40.0, 12.0, -7.0);
        let motion = |t: f64| Pose::new(r0 * rot_exp(&(w * t)), p0 + v * t);
        let samples = (0..=50)
            .map(|k| k as f64 * 0.04)
            .map(|t| TimedPose::new(t, motion(t)))
            .collect();
        let buf = PoseBuffer::from_samples(samples).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for _ in 0..100 {
            let t = rng.random_range(0.0..2.0);
            let got = buf.interpolate(t).unwrap();
            let want = motion(t);
            assert!((got.rotation.matrix() - want.rotation.matrix()).norm() < 1e-9);
            assert!((got.translation - want.translation).norm() < 1e-9);
        }
    }

    #[test]
    fn time_jacobian_cases() {
        let still = PoseBuffer::from_samples(vec![
            tp(0.0, Vec3::new(0.1, 0.2, 0.3), Vec3::new(1.0, 1.0, 1.0)),
            tp(1.0, Vec3::new(0.1, 0.2, 0.3), Vec3::new(1.0, 1.0, 1.0)),
        ])
        .unwrap();
        let j = still.time_jacobian(0.6, 0.1).unwrap();
        assert_eq!(j.d_rot, Matrix3::zeros());
        assert_eq!(j.d_rot_spatial, Vec3::zeros());
        assert_eq!(j.d_pos, Vec3::zeros());

        let slide = PoseBuffer::from_samples(vec![
            tp(0.0, Vec3::zeros(), Vec3::zeros()),
            tp(0.1, Vec3::zeros(), Vec3::new(10.0, 0.0, 0.0)),
        ])
        .unwrap();
        let j = slide.time_jacobian(0.06, 0.01).unwrap();
        assert!((j.d_pos - Vec3::new(-100.0, 0.0, 0.0)).norm() < 1e-12);
    }

    #[test]
    fn time_jacobian_matches_central_differences() {
        let h = 1e-6;
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let mut checked = 0;
        while checked < 200 {
            let buf = random_buffer(&mut rng, 8);
            let (a, b) = buf.span().unwrap();
            let t = rng.random_range(a..b);
            let t_d = rng.random_range(-0.05..0.05);
            let tau = t - t_d;
            // keep t − t_d ± h inside one bracketing interval
            let ok = buf.contains(tau - 1e-4)
                && buf.contains(tau + 1e-4)
                && buf.samples().iter().all(|s| (s.t - tau).abs() > 1e-4);
            if !ok {
                continue;
            }
            checked += 1;
            let jac = buf.time_jacobian(t, t_d).unwrap();
            let plus = buf.interpolate(t - (t_d + h)).unwrap();
            let minus = buf.interpolate(t - (t_d - h)).unwrap();
            let fd_rot = (plus.rotation.matrix() - minus.rotation.matrix()) / (2.0 * h);
            let fd_pos = (plus.translation - minus.translation) / (2.0 * h);
            assert!((jac.d_rot - fd_rot).norm() <= 1e-5 * fd_rot.norm().max(1.0));
            assert!((jac.d_pos - fd_pos).norm() <= 1e-5 * fd_pos.norm().max(1.0));
            // left-tangent form: Exp(δ)·R ≈ R + [δ]× R
            let r = buf.interpolate(tau).unwrap().rotation;
            let spatial = skew(&jac.d_rot_spatial) * r.matrix();
            assert!((spatial - fd_rot).norm() <= 1e-5 * fd_rot.norm().max(1.0));
        }
    }
}
