//! Python bindings for `lvs-calib`.
//!
//! Vectors are plain lists of floats; quaternions are `[w, x, y, z]`.

use std::path::PathBuf;

use lvs_calib::check::{run_jacobian_check, CheckOptions};
use lvs_calib::io::{self, CalibrationRecord};
use lvs_calib::liegeo::{self, OrthonormalLine, Pose, Vec3};
use lvs_calib::residual::{CalibrationState, FeatureObservation};
use lvs_calib::solver::{self, SolverError, SolverOptions};
use lvs_calib::synth::{self, ScenarioConfig, TruthModel};
use lvs_calib::trajectory::{PoseBuffer, TimedPose};
use nalgebra::{Quaternion, UnitQuaternion};
use pyo3::create_exception;
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

create_exception!(lvscal, CalibrationError, PyRuntimeError);
create_exception!(lvscal, InsufficientDataError, CalibrationError);

fn solver_err(e: SolverError) -> PyErr {
    match e {
        SolverError::InsufficientData { .. } => InsufficientDataError::new_err(e.to_string()),
        _ => CalibrationError::new_err(e.to_string()),
    }
}

fn value_err(e: impl ToString) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn rotation(q: [f64; 4]) -> PyResult<liegeo::Rotation> {
    let quat = Quaternion::new(q[0], q[1], q[2], q[3]);
    if !(quat.norm() > 1e-6 && quat.norm().is_finite()) {
        return Err(value_err("quaternion must be nonzero and finite"));
    }
    Ok(UnitQuaternion::new_normalize(quat).to_rotation_matrix())
}

fn matrix_rows(r: &liegeo::Rotation) -> [[f64; 3]; 3] {
    let m = r.matrix();
    [0, 1, 2].map(|i| [m[(i, 0)], m[(i, 1)], m[(i, 2)]])
}

fn matrix_from_rows(rows: [[f64; 3]; 3]) -> liegeo::Rotation {
    liegeo::Rotation::from_matrix_unchecked(nalgebra::Matrix3::from_fn(|i, j| rows[i][j]))
}

/// Rotation matrix (row-major nested lists) for a rotation vector.
#[pyfunction]
fn rot_exp(omega: [f64; 3]) -> [[f64; 3]; 3] {
    matrix_rows(&liegeo::rot_exp(&Vec3::from(omega)))
}

/// Rotation vector with norm at most π.
#[pyfunction]
fn rot_log(matrix: [[f64; 3]; 3]) -> [f64; 3] {
    liegeo::rot_log(&matrix_from_rows(matrix)).into()
}

/// Orthonormal line parameters `([ωx, ωy, ωz], m)` from Plücker `(v, n)`.
#[pyfunction]
fn to_orthonormal(v: [f64; 3], n: [f64; 3]) -> PyResult<([f64; 3], f64)> {
    let line = liegeo::PluckerLine::new(Vec3::from(v), Vec3::from(n)).map_err(value_err)?;
    let phi = line.to_orthonormal();
    Ok((phi.omega.into(), phi.m))
}

/// Plücker `(v, n)` from orthonormal parameters.
#[pyfunction]
fn from_orthonormal(omega: [f64; 3], m: f64) -> ([f64; 3], [f64; 3]) {
    let l = liegeo::from_orthonormal(&OrthonormalLine::new(Vec3::from(omega), m));
    (l.v.into(), l.n.into())
}

/// Point-to-line error vector `p × v − n`.
#[pyfunction]
fn point_line_error(p: [f64; 3], v: [f64; 3], n: [f64; 3]) -> PyResult<[f64; 3]> {
    let line = liegeo::PluckerLine::new(Vec3::from(v), Vec3::from(n)).map_err(value_err)?;
    Ok(liegeo::point_line_error(&Vec3::from(p), &line).into())
}

/// Robot pose stream plus stamped camera-frame feature points.
#[pyclass(module = "lvscal")]
struct Dataset {
    inner: solver::Dataset,
}

#[pymethods]
impl Dataset {
    /// `poses`: rows `[t, px, py, pz, qw, qx, qy, qz]`; `features`: rows `[t, x, y, z]`.
    #[new]
    fn new(poses: Vec<[f64; 8]>, features: Vec<[f64; 4]>) -> PyResult<Self> {
        let mut samples = Vec::with_capacity(poses.len());
        for r in poses {
            let rot = io::rotation_from_wxyz([r[4], r[5], r[6], r[7]]).map_err(value_err)?;
            samples.push(TimedPose::new(
                r[0],
                Pose::new(rot, Vec3::new(r[1], r[2], r[3])),
            ));
        }
        let buf = PoseBuffer::from_samples(samples).map_err(value_err)?;
        let feats = features
            .into_iter()
            .map(|r| FeatureObservation::new(r[0], Vec3::new(r[1], r[2], r[3])))
            .collect();
        Ok(Self {
            inner: solver::Dataset::new(buf, feats),
        })
    }

    /// Load `poses.csv` and `features.csv`.
    #[staticmethod]
    fn load(poses_path: PathBuf, features_path: PathBuf) -> PyResult<Self> {
        let inner = io::load_dataset(&poses_path, &features_path).map_err(value_err)?;
        Ok(Self { inner })
    }

    #[getter]
    fn num_poses(&self) -> usize {
        self.inner.poses.len()
    }

    #[getter]
    fn num_features(&self) -> usize {
        self.inner.features.len()
    }

    /// Pose rows `[t, px, py, pz, qw, qx, qy, qz]`.
    fn poses(&self) -> Vec<[f64; 8]> {
        self.inner
            .poses
            .samples()
            .iter()
            .map(|s| {
                let q = io::quat_wxyz(&s.pose.rotation);
                let p = s.pose.translation;
                [s.t, p.x, p.y, p.z, q[0], q[1], q[2], q[3]]
            })
            .collect()
    }

    /// Feature rows `[t, x, y, z]`.
    fn features(&self) -> Vec<[f64; 4]> {
        self.inner
            .features
            .iter()
            .map(|f| [f.t, f.p_cam.x, f.p_cam.y, f.p_cam.z])
            .collect()
    }

    /// Write `poses.csv` and `features.csv` into `directory`.
    fn save(&self, directory: PathBuf) -> PyResult<()> {
        std::fs::create_dir_all(&directory).map_err(value_err)?;
        io::write_poses(&directory.join("poses.csv"), self.inner.poses.samples())
            .map_err(value_err)?;
        io::write_features(&directory.join("features.csv"), &self.inner.features).map_err(value_err)
    }

    fn __len__(&self) -> usize {
        self.inner.features.len()
    }

    fn __repr__(&self) -> String {
        format!(
            "Dataset(num_poses={}, num_features={})",
            self.inner.poses.len(),
            self.inner.features.len()
        )
    }
}

fn record_dict<'py>(py: Python<'py>, rec: &CalibrationRecord) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("t_d_s", rec.t_d_s)?;
    d.set_item("he_quat_wxyz", rec.he_quat_wxyz)?;
    d.set_item("he_trans_mm", rec.he_trans_mm)?;
    let line = PyDict::new(py);
    line.set_item("v", rec.line.v)?;
    line.set_item("n", rec.line.n)?;
    d.set_item("line", line)?;
    d.set_item("rmse_mm", rec.rmse_mm)?;
    d.set_item("mae_mm", rec.mae_mm)?;
    d.set_item("iterations", rec.iterations)?;
    d.set_item("converged", rec.converged)?;
    if let Some(phi) = rec.phi {
        d.set_item("phi", phi)?;
    }
    if let Some(n) = rec.dropped_observations {
        d.set_item("dropped_observations", n)?;
    }
    if let Some(w) = rec.condition_warning {
        d.set_item("condition_warning", w)?;
    }
    d.set_item("condition_estimate", rec.condition_estimate)?;
    Ok(d)
}

/// Generate a synthetic scan. Returns `(Dataset, truth_dict)`.
#[pyfunction]
#[pyo3(signature = (*, td=0.018, noise=0.0, seed=0, duration=20.0, amplitude=30.0, sweep=0.3, cam_rate=33.0, pose_rate=250.0, smooth_truth=false))]
#[allow(clippy::too_many_arguments)]
fn synthesize<'py>(
    py: Python<'py>,
    td: f64,
    noise: f64,
    seed: u64,
    duration: f64,
    amplitude: f64,
    sweep: f64,
    cam_rate: f64,
    pose_rate: f64,
    smooth_truth: bool,
) -> PyResult<(Dataset, Bound<'py, PyDict>)> {
    let cfg = ScenarioConfig {
        td_truth: td,
        noise_sigma: noise,
        seed,
        duration,
        path_amplitude: amplitude,
        attitude_sweep: sweep,
        cam_rate,
        pose_rate,
        truth_model: if smooth_truth {
            TruthModel::Smooth
        } else {
            TruthModel::PiecewiseConstantTwist
        },
        ..Default::default()
    };
    cfg.validate().map_err(value_err)?;
    let data = synth::synthesize(&cfg);
    let truth = record_dict(py, &CalibrationRecord::from_truth(&data.truth))?;
    truth.set_item("skipped", data.skipped)?;
    Ok((
        Dataset {
            inner: data.to_dataset(),
        },
        truth,
    ))
}

/// Estimate `t_d`, hand-eye and line. Returns the report as a dict with an
/// extra `history` list of per-iteration dicts.
#[pyfunction]
#[allow(clippy::too_many_arguments)]
#[pyo3(signature = (dataset, he_quat_wxyz, he_trans_mm, *, td=0.0, phi=None, huber_delta=1.0, max_iters=100))]
fn calibrate<'py>(
    py: Python<'py>,
    dataset: &Dataset,
    he_quat_wxyz: [f64; 4],
    he_trans_mm: [f64; 3],
    td: f64,
    phi: Option<[f64; 4]>,
    huber_delta: f64,
    max_iters: usize,
) -> PyResult<Bound<'py, PyDict>> {
    let he = Pose::new(rotation(he_quat_wxyz)?, Vec3::from(he_trans_mm));
    let opts = SolverOptions {
        huber_delta,
        max_iters,
        ..Default::default()
    };
    opts.validate().map_err(value_err)?;
    let data = &dataset.inner;
    let report = py
        .detach(|| {
            let init = match phi {
                Some(p) => CalibrationState::new(
                    td,
                    OrthonormalLine::new(Vec3::new(p[0], p[1], p[2]), p[3]),
                    he,
                ),
                None => solver::initial_state(data, he, td)?,
            };
            solver::calibrate(data, &init, &opts)
        })
        .map_err(solver_err)?;
    let d = record_dict(py, &CalibrationRecord::from_report(&report, None))?;
    let history = report
        .history
        .iter()
        .map(|h| {
            let e = PyDict::new(py);
            e.set_item("iter", h.iter)?;
            e.set_item("cost", h.cost)?;
            e.set_item("rmse_mm", h.rmse)?;
            e.set_item("t_d_s", h.t_d)?;
            e.set_item("mu", h.mu)?;
            e.set_item("accepted", h.accepted)?;
            Ok(e)
        })
        .collect::<PyResult<Vec<_>>>()?;
    d.set_item("history", history)?;
    Ok(d)
}

/// Max relative analytic-vs-numeric Jacobian error per block.
#[pyfunction]
#[pyo3(signature = (cases=200, seed=0x5eed))]
fn jacobian_check<'py>(py: Python<'py>, cases: usize, seed: u64) -> PyResult<Bound<'py, PyDict>> {
    let report = py.detach(|| {
        run_jacobian_check(&CheckOptions {
            cases,
            seed,
            ..Default::default()
        })
    });
    let d = PyDict::new(py);
    for b in &report.blocks {
        d.set_item(b.name, b.max_rel_error)?;
    }
    Ok(d)
}

#[pymodule]
fn lvscal(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("CalibrationError", m.py().get_type::<CalibrationError>())?;
    m.add(
        "InsufficientDataError",
        m.py().get_type::<InsufficientDataError>(),
    )?;
    m.add_class::<Dataset>()?;
    m.add_function(wrap_pyfunction!(rot_exp, m)?)?;
    m.add_function(wrap_pyfunction!(rot_log, m)?)?;
    m.add_function(wrap_pyfunction!(to_orthonormal, m)?)?;
    m.add_function(wrap_pyfunction!(from_orthonormal, m)?)?;
    m.add_function(wrap_pyfunction!(point_line_error, m)?)?;
    m.add_function(wrap_pyfunction!(synthesize, m)?)?;
    m.add_function(wrap_pyfunction!(calibrate, m)?)?;
    m.add_function(wrap_pyfunction!(jacobian_check, m)?)?;
    Ok(())
}
