//! Dataset and report file formats.
//!
//! - `poses.csv`: `t,px,py,pz,qw,qx,qy,qz` (seconds, millimeters, unit
//!   Hamilton quaternion rotating end-effector coordinates into the base frame)
//! - `features.csv`: `t,x,y,z` (seconds, millimeters, camera frame)
//! - `truth.json` / `report.json`: [`CalibrationRecord`]
//! - `iterations.csv`: `iter,cost,rmse_mm,t_d_s,mu,accepted`
//!
//! Floats are written with 17 significant digits.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use nalgebra::{Quaternion, UnitQuaternion};
use serde::{Deserialize, Serialize};
use serde_json::ser::{Formatter, PrettyFormatter};
use thiserror::Error;

use crate::liegeo::{OrthonormalLine, PluckerLine, Pose, Rotation, Vec3};
use crate::residual::{CalibrationState, FeatureObservation};
use crate::solver::{CalibrationReport, Dataset, IterationRecord};
use crate::trajectory::{PoseBuffer, TimedPose, TrajectoryError};

pub const POSES_HEADER: [&str; 8] = ["t", "px", "py", "pz", "qw", "qx", "qy", "qz"];
pub const FEATURES_HEADER: [&str; 4] = ["t", "x", "y", "z"];
pub const ITERATIONS_HEADER: &str = "iter,cost,rmse_mm,t_d_s,mu,accepted";
/// Allowed deviation of a quaternion norm from 1.
pub const QUAT_NORM_TOL: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("{}:{line}: {msg}", path.display())]
    Parse {
        path: PathBuf,
        line: u64,
        msg: String,
    },
    #[error("{}:{line}: timestamp {got} does not follow {prev}", path.display())]
    NonMonotonicTimestamp {
        path: PathBuf,
        line: u64,
        prev: f64,
        got: f64,
    },
    #[error("{}: no data rows", path.display())]
    EmptyStream { path: PathBuf },
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{}: {source}", path.display())]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> IngestError + '_ {
    move |source| IngestError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Quaternion `[w, x, y, z]` with `w ≥ 0`.
pub fn quat_wxyz(r: &Rotation) -> [f64; 4] {
    let q = UnitQuaternion::from_rotation_matrix(r);
    let s = if q.w < 0.0 { -1.0 } else { 1.0 };
    [s * q.w, s * q.i, s * q.j, s * q.k]
}

/// Rotation from `[w, x, y, z]`; the norm must be within [`QUAT_NORM_TOL`] of 1.
pub fn rotation_from_wxyz(q: [f64; 4]) -> Result<Rotation, String> {
    let quat = Quaternion::new(q[0], q[1], q[2], q[3]);
    let norm = quat.norm();
    if !norm.is_finite() || (norm - 1.0).abs() > QUAT_NORM_TOL {
        return Err(format!(
            "quaternion norm {norm} is not 1 (tolerance {QUAT_NORM_TOL:e})"
        ));
    }
    Ok(UnitQuaternion::new_normalize(quat).to_rotation_matrix())
}

fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

type NumberedRows<const N: usize> = Vec<(u64, [f64; N])>;

struct Rows {
    path: PathBuf,
    reader: csv::Reader<File>,
}

impl Rows {
    fn open(path: &Path, header: &[&str]) -> Result<Self, IngestError> {
        let file = File::open(path).map_err(io_err(path))?;
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(true)
            .flexible(true)
            .trim(csv::Trim::All)
            .from_reader(file);
        let got = reader.headers().map_err(|e| IngestError::Parse {
            path: path.to_path_buf(),
            line: 1,
            msg: e.to_string(),
        })?;
        if got.iter().ne(header.iter().copied()) {
            return Err(IngestError::Parse {
                path: path.to_path_buf(),
                line: 1,
                msg: format!(
                    "expected header `{}`, found `{}`",
                    header.join(","),
                    got.iter().collect::<Vec<_>>().join(",")
                ),
            });
        }
        Ok(Self {
            path: path.to_path_buf(),
            reader,
        })
    }

    /// Each data row as `(line number, values)`.
    fn read_all<const N: usize>(self) -> Result<(PathBuf, NumberedRows<N>), IngestError> {
        let Rows { path, mut reader } = self;
        let parse_error = |line: u64, msg: String| IngestError::Parse {
            path: path.clone(),
            line,
            msg,
        };
        let mut out = Vec::new();
        for rec in reader.records() {
            let rec =
                rec.map_err(|e| parse_error(e.position().map_or(0, |p| p.line()), e.to_string()))?;
            let line = rec.position().map_or(0, |p| p.line());
            if rec.len() != N {
                return Err(parse_error(
                    line,
                    format!("expected {N} fields, found {}", rec.len()),
                ));
            }
            let mut vals = [0.0; N];
            for (i, field) in rec.iter().enumerate() {
                let v: f64 = field.parse().map_err(|_| {
                    parse_error(line, format!("field {} is not a number: `{field}`", i + 1))
                })?;
                if !v.is_finite() {
                    return Err(parse_error(line, format!("field {} is not finite", i + 1)));
                }
                vals[i] = v;
            }
            out.push((line, vals));
        }
        if out.is_empty() {
            return Err(IngestError::EmptyStream { path });
        }
        Ok((path, out))
    }
}

fn check_monotonic(path: &Path, rows: &[(u64, f64)]) -> Result<(), IngestError> {
    for w in rows.windows(2) {
        if w[1].1 <= w[0].1 {
            return Err(IngestError::NonMonotonicTimestamp {
                path: path.to_path_buf(),
                line: w[1].0,
                prev: w[0].1,
                got: w[1].1,
            });
        }
    }
    Ok(())
}

pub fn read_poses(path: &Path) -> Result<PoseBuffer, IngestError> {
    let (path, rows) = Rows::open(path, &POSES_HEADER)?.read_all::<8>()?;
    let stamps: Vec<_> = rows.iter().map(|(l, r)| (*l, r[0])).collect();
    check_monotonic(&path, &stamps)?;
    let mut samples = Vec::with_capacity(rows.len());
    for (line, r) in rows {
        let rotation =
            rotation_from_wxyz([r[4], r[5], r[6], r[7]]).map_err(|msg| IngestError::Parse {
                path: path.clone(),
                line,
                msg,
            })?;
        samples.push(TimedPose::new(
            r[0],
            Pose::new(rotation, Vec3::new(r[1], r[2], r[3])),
        ));
    }
    PoseBuffer::from_samples(samples).map_err(|e| match e {
        TrajectoryError::NonMonotonicTimestamp { prev, got } => {
            IngestError::NonMonotonicTimestamp {
                path: path.clone(),
                line: 0,
                prev,
                got,
            }
        }
        other => IngestError::Parse {
            path: path.clone(),
            line: 0,
            msg: other.to_string(),
        },
    })
}

pub fn read_features(path: &Path) -> Result<Vec<FeatureObservation>, IngestError> {
    let (path, rows) = Rows::open(path, &FEATURES_HEADER)?.read_all::<4>()?;
    let stamps: Vec<_> = rows.iter().map(|(l, r)| (*l, r[0])).collect();
    check_monotonic(&path, &stamps)?;
    rows.into_iter()
        .map(|(line, r)| {
            if r[3] <= 0.0 {
                return Err(IngestError::Parse {
                    path: path.clone(),
                    line,
                    msg: format!("feature depth z = {} is not in front of the camera", r[3]),
                });
            }
            Ok(FeatureObservation::new(r[0], Vec3::new(r[1], r[2], r[3])))
        })
        .collect()
}

/// Load and validate a pose file and a feature file.
pub fn load_dataset(pose_path: &Path, feature_path: &Path) -> Result<Dataset, IngestError> {
    let poses = read_poses(pose_path)?;
    let features = read_features(feature_path)?;
    Ok(Dataset::new(poses, features))
}

pub fn write_poses(path: &Path, poses: &[TimedPose]) -> Result<(), IngestError> {
    let mut w = BufWriter::new(File::create(path).map_err(io_err(path))?);
    let mut body = || -> std::io::Result<()> {
        writeln!(w, "{}", POSES_HEADER.join(","))?;
        for p in poses {
            let q = quat_wxyz(&p.pose.rotation);
            let t = p.pose.translation;
            let row = [p.t, t.x, t.y, t.z, q[0], q[1], q[2], q[3]].map(fmt_f64);
            writeln!(w, "{}", row.join(","))?;
        }
        w.flush()
    };
    body().map_err(io_err(path))
}

pub fn write_features(path: &Path, features: &[FeatureObservation]) -> Result<(), IngestError> {
    let mut w = BufWriter::new(File::create(path).map_err(io_err(path))?);
    let mut body = || -> std::io::Result<()> {
        writeln!(w, "{}", FEATURES_HEADER.join(","))?;
        for f in features {
            let row = [f.t, f.p_cam.x, f.p_cam.y, f.p_cam.z].map(fmt_f64);
            writeln!(w, "{}", row.join(","))?;
        }
        w.flush()
    };
    body().map_err(io_err(path))
}

pub fn write_iterations(path: &Path, history: &[IterationRecord]) -> Result<(), IngestError> {
    let mut w = BufWriter::new(File::create(path).map_err(io_err(path))?);
    let mut body = || -> std::io::Result<()> {
        writeln!(w, "{ITERATIONS_HEADER}")?;
        for h in history {
            writeln!(
                w,
                "{},{},{},{},{},{}",
                h.iter,
                fmt_f64(h.cost),
                fmt_f64(h.rmse),
                fmt_f64(h.t_d),
                fmt_f64(h.mu),
                u8::from(h.accepted)
            )?;
        }
        w.flush()
    };
    body().map_err(io_err(path))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LineRecord {
    pub v: [f64; 3],
    pub n: [f64; 3],
}

/// Shared schema of `truth.json` and `report.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationRecord {
    pub t_d_s: f64,
    pub he_quat_wxyz: [f64; 4],
    pub he_trans_mm: [f64; 3],
    pub line: LineRecord,
    pub rmse_mm: f64,
    pub mae_mm: f64,
    pub iterations: usize,
    pub converged: bool,
    /// `[ω_x, ω_y, ω_z, m]`
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub phi: Option<[f64; 4]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dropped_observations: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub condition_estimate: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub condition_warning: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub created_unix_s: Option<u64>,
}

fn vec_arr(v: &Vec3) -> [f64; 3] {
    [v.x, v.y, v.z]
}

impl CalibrationRecord {
    fn from_state(state: &CalibrationState) -> Self {
        let line = state.plucker();
        Self {
            t_d_s: state.t_d,
            he_quat_wxyz: quat_wxyz(&state.hand_eye.rotation),
            he_trans_mm: vec_arr(&state.hand_eye.translation),
            line: LineRecord {
                v: vec_arr(&line.v),
                n: vec_arr(&line.n),
            },
            rmse_mm: 0.0,
            mae_mm: 0.0,
            iterations: 0,
            converged: true,
            phi: Some(state.line.as_array()),
            dropped_observations: None,
            condition_estimate: None,
            condition_warning: None,
            created_unix_s: None,
        }
    }

    /// Ground-truth record: zero residuals, no iterations.
    pub fn from_truth(state: &CalibrationState) -> Self {
        Self::from_state(state)
    }

    pub fn from_report(report: &CalibrationReport, created_unix_s: Option<u64>) -> Self {
        Self {
            rmse_mm: report.rmse,
            mae_mm: report.mae,
            iterations: report.iterations,
            converged: report.converged,
            dropped_observations: Some(report.dropped_observations),
            condition_estimate: report.condition.is_finite().then_some(report.condition),
            condition_warning: Some(report.condition_warning),
            created_unix_s,
            ..Self::from_state(&report.state)
        }
    }

    /// Rebuild the state; the line comes from the Plücker record.
    pub fn to_state(&self) -> Result<CalibrationState, String> {
        let rotation = rotation_from_wxyz(self.he_quat_wxyz)?;
        let line = PluckerLine::new(Vec3::from(self.line.v), Vec3::from(self.line.n))
            .map_err(|e| e.to_string())?;
        let phi: OrthonormalLine = line.to_orthonormal();
        Ok(CalibrationState::new(
            self.t_d_s,
            phi,
            Pose::new(rotation, Vec3::from(self.he_trans_mm)),
        ))
    }
}

/// Pretty JSON with every float printed to 17 significant digits.
struct PreciseFormatter<'a>(PrettyFormatter<'a>);

impl Formatter for PreciseFormatter<'_> {
    fn write_f64<W: ?Sized + Write>(&mut self, w: &mut W, value: f64) -> std::io::Result<()> {
        if value.is_finite() {
            write!(w, "{value:.16e}")
        } else {
            w.write_all(b"null")
        }
    }

    fn begin_array<W: ?Sized + Write>(&mut self, w: &mut W) -> std::io::Result<()> {
        self.0.begin_array(w)
    }

    fn end_array<W: ?Sized + Write>(&mut self, w: &mut W) -> std::io::Result<()> {
        self.0.end_array(w)
    }

    fn begin_array_value<W: ?Sized + Write>(
        &mut self,
        w: &mut W,
        first: bool,
    ) -> std::io::Result<()> {
        self.0.begin_array_value(w, first)
    }

    fn end_array_value<W: ?Sized + Write>(&mut self, w: &mut W) -> std::io::Result<()> {
        self.0.end_array_value(w)
    }

    fn begin_object<W: ?Sized + Write>(&mut self, w: &mut W) -> std::io::Result<()> {
        self.0.begin_object(w)
    }

    fn end_object<W: ?Sized + Write>(&mut self, w: &mut W) -> std::io::Result<()> {
        self.0.end_object(w)
    }

    fn begin_object_key<W: ?Sized + Write>(
        &mut self,
        w: &mut W,
        first: bool,
    ) -> std::io::Result<()> {
        self.0.begin_object_key(w, first)
    }

    fn begin_object_value<W: ?Sized + Write>(&mut self, w: &mut W) -> std::io::Result<()> {
        self.0.begin_object_value(w)
    }

    fn end_object_value<W: ?Sized + Write>(&mut self, w: &mut W) -> std::io::Result<()> {
        self.0.end_object_value(w)
    }
}

pub fn to_json_string<T: Serialize>(value: &T) -> String {
    let mut buf = Vec::new();
    let mut ser =
        serde_json::Serializer::with_formatter(&mut buf, PreciseFormatter(PrettyFormatter::new()));
    value
        .serialize(&mut ser)
        .expect("in-memory serialization cannot fail");
    buf.push(b'\n');
    String::from_utf8(buf).expect("serde_json emits UTF-8")
}

pub fn write_record(path: &Path, record: &CalibrationRecord) -> Result<(), IngestError> {
    std::fs::write(path, to_json_string(record)).map_err(io_err(path))
}

pub fn read_record(path: &Path) -> Result<CalibrationRecord, IngestError> {
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    serde_json::from_str(&text).map_err(|source| IngestError::Json {
        path: path.to_path_buf(),
        source,
    })
}
