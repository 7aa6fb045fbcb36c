//! Ground-truth scenario generator.
//!
//! The sensor is driven along the true line with sinusoidal lateral and
//! standoff offsets and a three-axis sinusoidal attitude sweep, so both the
//! linear velocity and the orientation vary continuously. The end-effector pose is
//! derived from the sensor pose through the true hand-eye transform.
//!
//! The laser plane is fixed as the camera-frame plane `y = 0`. Each camera
//! tick at time `t` measures the intersection of the line with that plane
//! using the robot pose at `t − t_d`, adds isotropic Gaussian noise and is
//! stamped `t`.
//!
//! Noise is drawn from a `ChaCha8Rng` seeded with `seed_from_u64(seed)`
//! through `rand_distr::Normal`, three samples (x, y, z) per emitted feature
//! in tick order.

use std::f64::consts::TAU;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::liegeo::{orthogonal_completion, rot_exp, PluckerLine, Pose, Rotation, Vec3};
use crate::residual::{CalibrationState, FeatureObservation};
use crate::solver::Dataset;
use crate::trajectory::{PoseBuffer, TimedPose};

/// Frequencies (Hz) and phases of the three attitude-sweep components.
const SWEEP_FREQ: [f64; 3] = [0.13, 0.21, 0.17];
const SWEEP_PHASE: [f64; 3] = [0.0, 1.0, 2.0];
/// Lines closer than this angle to the sensor plane are unobservable.
pub const PARALLEL_TOL_RAD: f64 = 1e-6;

/// How the true pose at `t − t_d` is obtained for each camera tick.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TruthModel {
    /// The robot executes the emitted setpoints with constant twist between
    /// samples; the true pose is that executed motion.
    #[default]
    PiecewiseConstantTwist,
    /// The true pose comes from the smooth design curve, so the estimator's
    /// interpolation error shows up in the residuals.
    Smooth,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioConfig {
    pub line_truth: PluckerLine,
    /// True camera pose in the end-effector frame.
    pub he_truth: Pose,
    /// Seconds.
    pub td_truth: f64,
    /// Robot feedback rate (Hz).
    pub pose_rate: f64,
    /// Camera rate (Hz).
    pub cam_rate: f64,
    /// Camera capture duration (seconds).
    pub duration: f64,
    /// Extra robot samples before and after the capture window (seconds).
    pub margin: f64,
    /// Lateral S-path amplitude (millimeters).
    pub path_amplitude: f64,
    /// Lateral S-path frequency (Hz).
    pub lateral_freq: f64,
    /// Attitude sweep amplitude per axis (radians).
    pub attitude_sweep: f64,
    /// Progress speed along the line (mm/s).
    pub scan_speed: f64,
    /// Mean sensor distance from the line (millimeters).
    pub standoff: f64,
    /// Standoff variation amplitude as a multiple of `path_amplitude`.
    pub depth_ratio: f64,
    /// Frequency of the standoff variation (Hz).
    pub depth_freq: f64,
    /// Feature noise per axis (millimeters).
    pub noise_sigma: f64,
    pub seed: u64,
    pub truth_model: TruthModel,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            line_truth: PluckerLine::from_point_dir(
                &Vec3::new(900.0, -150.0, 50.0),
                &Vec3::new(1.0, 0.2, 0.05),
            )
            .expect("nonzero direction"),
            he_truth: Pose::new(
                rot_exp(&Vec3::new(0.1, -0.2, 1.4)),
                Vec3::new(35.0, -60.0, 180.0),
            ),
            td_truth: 0.018,
            pose_rate: 250.0,
            cam_rate: 33.0,
            duration: 20.0,
            margin: 0.25,
            path_amplitude: 30.0,
            lateral_freq: 0.25,
            attitude_sweep: 0.3,
            scan_speed: 20.0,
            standoff: 250.0,
            depth_ratio: 3.0,
            depth_freq: 0.09,
            noise_sigma: 0.0,
            seed: 0,
            truth_model: TruthModel::default(),
        }
    }
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<(), String> {
        let positive = [
            ("pose_rate", self.pose_rate),
            ("cam_rate", self.cam_rate),
            ("duration", self.duration),
            ("standoff", self.standoff),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(format!("{name} must be positive, got {v}"));
            }
        }
        let non_negative = [
            ("noise_sigma", self.noise_sigma),
            ("margin", self.margin),
            ("path_amplitude", self.path_amplitude),
            ("attitude_sweep", self.attitude_sweep),
            ("lateral_freq", self.lateral_freq),
            ("depth_ratio", self.depth_ratio),
            ("depth_freq", self.depth_freq),
        ];
        for (name, v) in non_negative {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(format!("{name} must be non-negative, got {v}"));
            }
        }
        if !self.scan_speed.is_finite() || !self.td_truth.is_finite() {
            return Err("scan_speed and td_truth must be finite".into());
        }
        if self.depth_amplitude() >= self.standoff {
            return Err("path_amplitude * depth_ratio must stay below standoff".into());
        }
        if self.td_truth.abs() > self.margin {
            return Err(format!(
                "|td_truth| = {} exceeds the pose margin {}",
                self.td_truth.abs(),
                self.margin
            ));
        }
        Ok(())
    }

    /// Standoff variation amplitude (millimeters).
    pub fn depth_amplitude(&self) -> f64 {
        self.path_amplitude * self.depth_ratio
    }

    /// Time span of the robot pose stream.
    pub fn pose_span(&self) -> f64 {
        self.duration + 2.0 * self.margin
    }

    /// Number of camera ticks, `floor(duration · cam_rate)`.
    pub fn camera_ticks(&self) -> usize {
        (self.duration * self.cam_rate).floor() as usize
    }

    pub fn truth_state(&self) -> CalibrationState {
        CalibrationState::new(
            self.td_truth,
            self.line_truth.to_orthonormal(),
            self.he_truth,
        )
    }

    /// Sensor pose in the base frame on the smooth design curve.
    pub fn sensor_pose(&self, t: f64) -> Pose {
        let v = self.line_truth.v;
        let lateral = orthogonal_completion(&v);
        let normal = v.cross(&lateral);
        // camera x = lateral, y = along the line, z = towards the line
        let nominal = Rotation::from_matrix_unchecked(nalgebra::Matrix3::from_columns(&[
            lateral, v, -normal,
        ]));
        let sweep = Vec3::from_fn(|i, _| {
            self.attitude_sweep * (TAU * SWEEP_FREQ[i] * t + SWEEP_PHASE[i]).sin()
        });
        let along = self.scan_speed * (t - 0.5 * self.pose_span());
        let offset = self.path_amplitude * (TAU * self.lateral_freq * t).sin();
        let depth = self.standoff + self.depth_amplitude() * (TAU * self.depth_freq * t).sin();
        let position =
            self.line_truth.closest_point() + v * along + lateral * offset + normal * depth;
        Pose::new(nominal * rot_exp(&sweep), position)
    }

    /// End-effector pose on the smooth design curve.
    pub fn end_effector_pose(&self, t: f64) -> Pose {
        self.sensor_pose(t).compose(&self.he_truth.inverse())
    }
}

/// End-effector S-path sampled at `pose_rate` over `[0, duration + 2·margin]`.
pub fn make_s_path(cfg: &ScenarioConfig) -> Vec<TimedPose> {
    let count = (cfg.pose_span() * cfg.pose_rate).ceil() as usize;
    (0..=count)
        .map(|k| {
            let t = k as f64 / cfg.pose_rate;
            TimedPose::new(t, cfg.end_effector_pose(t))
        })
        .collect()
}

/// Outcome of one simulated laser measurement.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Measurement {
    /// Intersection point in the camera frame (millimeters).
    Point(Vec3),
    /// The line is (nearly) parallel to the sensor plane or behind the camera.
    Unobservable,
}

/// Intersect `line` with the camera-frame plane `y = 0`.
pub fn simulate_measurement(pose: &Pose, hand_eye: &Pose, line: &PluckerLine) -> Measurement {
    let to_cam = pose.compose(hand_eye).inverse();
    let dir = to_cam.rotation * line.v;
    let origin = to_cam.transform_point(&line.closest_point());
    if dir.y.abs() < PARALLEL_TOL_RAD.sin() {
        return Measurement::Unobservable;
    }
    let s = -origin.y / dir.y;
    let mut p = origin + dir * s;
    p.y = 0.0;
    if p.z > 0.0 {
        Measurement::Point(p)
    } else {
        Measurement::Unobservable
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthDataset {
    pub poses: Vec<TimedPose>,
    pub features: Vec<FeatureObservation>,
    pub truth: CalibrationState,
    /// Camera ticks without a usable measurement.
    pub skipped: usize,
}

impl SynthDataset {
    pub fn to_dataset(&self) -> Dataset {
        let buf = PoseBuffer::from_samples(self.poses.clone())
            .expect("generated pose timestamps are strictly increasing");
        Dataset::new(buf, self.features.clone())
    }
}

/// Generate poses, features and the truth record for `cfg`.
pub fn synthesize(cfg: &ScenarioConfig) -> SynthDataset {
    let poses = make_s_path(cfg);
    let executed = PoseBuffer::from_samples(poses.clone())
        .expect("generated pose timestamps are strictly increasing");
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let noise = Normal::new(0.0, cfg.noise_sigma).expect("noise_sigma is finite and non-negative");

    let mut features = Vec::with_capacity(cfg.camera_ticks());
    let mut skipped = 0;
    for k in 0..cfg.camera_ticks() {
        let t = cfg.margin + k as f64 / cfg.cam_rate;
        let tau = t - cfg.td_truth;
        let pose = match cfg.truth_model {
            TruthModel::PiecewiseConstantTwist => executed
                .interpolate(tau)
                .expect("camera ticks lie inside the pose margin"),
            TruthModel::Smooth => cfg.end_effector_pose(tau),
        };
        match simulate_measurement(&pose, &cfg.he_truth, &cfg.line_truth) {
            Measurement::Point(p) => {
                let w = Vec3::new(
                    noise.sample(&mut rng),
                    noise.sample(&mut rng),
                    noise.sample(&mut rng),
                );
                features.push(FeatureObservation::new(t, p + w));
            }
            Measurement::Unobservable => skipped += 1,
        }
    }

    SynthDataset {
        poses,
        features,
        truth: cfg.truth_state(),
        skipped,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::residual::{evaluate, map_feature_to_base};

    fn short(mut cfg: ScenarioConfig) -> ScenarioConfig {
        cfg.duration = 4.0;
        cfg
    }

    #[test]
    fn zero_sweep_gives_constant_attitude() {
        let cfg = short(ScenarioConfig {
            attitude_sweep: 0.0,
            ..Default::default()
        });
        let path = make_s_path(&cfg);
        assert!(path
            .iter()
            .all(|p| p.pose.rotation == path[0].pose.rotation));

        let cfg = ScenarioConfig {
            path_amplitude: 0.0,
            ..cfg
        };
        let buf = PoseBuffer::from_samples(make_s_path(&cfg)).unwrap();
        let v0 = buf.velocity_at(0.1).unwrap().vel;
        for k in 1..40 {
            let v = buf.velocity_at(0.1 * k as f64).unwrap();
            assert!((v.vel - v0).norm() < 1e-6);
            assert_eq!(v.omega, Vec3::zeros());
        }
        assert!(v0.normalize().cross(&cfg.line_truth.v).norm() < 1e-9);
    }

    #[test]
    fn s_path_speed_varies() {
        let cfg = ScenarioConfig::default();
        let buf = PoseBuffer::from_samples(make_s_path(&cfg)).unwrap();
        let (a, b) = buf.span().unwrap();
        let speeds: Vec<f64> = (0..2000)
            .map(|k| a + (b - a) * k as f64 / 2000.0)
            .map(|t| buf.velocity_at(t).unwrap().vel.norm())
            .collect();
        let max = speeds.iter().cloned().fold(0.0, f64::max);
        let min = speeds.iter().cloned().fold(f64::INFINITY, f64::min);
        assert!(max / min > 1.1, "speed ratio {}", max / min);
        assert!((b - a - cfg.pose_span()).abs() < 1.0 / cfg.pose_rate);
    }

    #[test]
    fn measurement_hand_computed() {
        // camera at the origin looking down +z; line crosses y = 0 at (10, 0, 200)
        let line =
            PluckerLine::from_point_dir(&Vec3::new(10.0, 0.0, 200.0), &Vec3::new(0.0, 1.0, 1.0))
                .unwrap();
        let got = simulate_measurement(&Pose::identity(), &Pose::identity(), &line);
        match got {
            Measurement::Point(p) => assert!((p - Vec3::new(10.0, 0.0, 200.0)).norm() < 1e-12),
            Measurement::Unobservable => panic!("expected a point"),
        }

        let in_plane =
            PluckerLine::from_point_dir(&Vec3::new(0.0, 0.0, 200.0), &Vec3::x()).unwrap();
        assert_eq!(
            simulate_measurement(&Pose::identity(), &Pose::identity(), &in_plane),
            Measurement::Unobservable
        );
    }

    #[test]
    fn measurement_maps_back_onto_line() {
        let cfg = ScenarioConfig::default();
        for k in 0..50 {
            let pose = cfg.end_effector_pose(0.37 * k as f64);
            let Measurement::Point(p) = simulate_measurement(&pose, &cfg.he_truth, &cfg.line_truth)
            else {
                panic!("unobservable tick");
            };
            let back = pose.transform_point(&cfg.he_truth.transform_point(&p));
            assert!(cfg.line_truth.distance(&back) < 1e-9);
        }
    }

    #[test]
    fn noise_free_truth_has_zero_residual() {
        for td in [0.0, 0.018] {
            let cfg = short(ScenarioConfig {
                td_truth: td,
                ..Default::default()
            });
            let syn = synthesize(&cfg);
            let data = syn.to_dataset();
            assert_eq!(syn.features.len() + syn.skipped, cfg.camera_ticks());
            for f in &data.features {
                let r = evaluate(&syn.truth, &data.poses, f).unwrap().r;
                assert!(r.norm() < 1e-9);
                let p = map_feature_to_base(&syn.truth, &data.poses, f).unwrap();
                assert!(cfg.line_truth.distance(&p) < 1e-9);
            }
        }
    }

    #[test]
    fn ignoring_offset_costs_more_on_faster_paths() {
        let rmse_without_offset = |amplitude: f64| {
            let cfg = short(ScenarioConfig {
                path_amplitude: amplitude,
                attitude_sweep: 0.0,
                ..Default::default()
            });
            let syn = synthesize(&cfg);
            let data = syn.to_dataset();
            let mut state = syn.truth;
            state.t_d = 0.0;
            let sq: f64 = data
                .features
                .iter()
                .map(|f| evaluate(&state, &data.poses, f).unwrap().r.norm_squared())
                .sum();
            (sq / data.features.len() as f64).sqrt()
        };
        let slow = rmse_without_offset(10.0);
        let fast = rmse_without_offset(40.0);
        assert!(slow > 1e-3);
        assert!(fast > 2.0 * slow, "slow {slow} fast {fast}");
    }

    #[test]
    fn seeded_runs_repeat() {
        let cfg = short(ScenarioConfig {
            noise_sigma: 0.1,
            seed: 99,
            ..Default::default()
        });
        assert_eq!(synthesize(&cfg), synthesize(&cfg));
        let other = synthesize(&ScenarioConfig {
            seed: 100,
            ..cfg.clone()
        });
        assert_ne!(synthesize(&cfg).features, other.features);
    }

    #[test]
    fn injected_noise_has_requested_spread() {
        let sigma = 0.1;
        let noisy = ScenarioConfig {
            noise_sigma: sigma,
            seed: 5,
            ..Default::default()
        };
        let clean = ScenarioConfig {
            noise_sigma: 0.0,
            ..noisy.clone()
        };
        let a = synthesize(&noisy);
        let b = synthesize(&clean);
        assert!(a.features.len() >= 600);
        let n = a.features.len() as f64;
        for axis in 0..3 {
            let d: Vec<f64> = a
                .features
                .iter()
                .zip(&b.features)
                .map(|(x, y)| x.p_cam[axis] - y.p_cam[axis])
                .collect();
            let mean = d.iter().sum::<f64>() / n;
            let sd = (d.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
            assert!((sd - sigma).abs() < 0.1 * sigma, "axis {axis}: sd {sd}");
        }
    }

    #[test]
    fn smooth_truth_leaves_interpolation_error() {
        let cfg = short(ScenarioConfig {
            truth_model: TruthModel::Smooth,
            ..Default::default()
        });
        let syn = synthesize(&cfg);
        let data = syn.to_dataset();
        let worst = data
            .features
            .iter()
            .map(|f| evaluate(&syn.truth, &data.poses, f).unwrap().r.norm())
            .fold(0.0, f64::max);
        assert!(worst > 1e-9 && worst < 1e-2, "worst {worst}");
    }

    #[test]
    fn config_validation() {
        assert!(ScenarioConfig::default().validate().is_ok());
        assert!(ScenarioConfig {
            cam_rate: 0.0,
            ..Default::default()
        }
        .validate()
        .is_err());
        assert!(ScenarioConfig {
            noise_sigma: -1.0,
            ..Default::default()
        }
        .validate()
        .is_err());
        assert!(ScenarioConfig {
            td_truth: 0.3,
            ..Default::default()
        }
        .validate()
        .is_err());
    }
}
