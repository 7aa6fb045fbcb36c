//! Rotation-group algebra and 3D line representations.
//!
//! Lines are handled in two forms:
//!
//! - [`PluckerLine`]: unit direction `v` and moment `n = p0 × v`.
//! - [`OrthonormalLine`]: the minimal 4-DOF form `(ω, m)` where
//!   `U = Exp(ω) = [v, n/|n|, v×n/|n|]` and `m = |n|`.
//!
//! Units: millimeters for positions and moments, radians for rotation vectors.

use nalgebra::{Matrix3, Rotation3, UnitQuaternion, Vector3};
use thiserror::Error;

pub type Vec3 = Vector3<f64>;
pub type Rotation = Rotation3<f64>;

/// Below this angle `rot_exp`/`rot_log` switch to Taylor expansions.
const SMALL_ANGLE: f64 = 1e-8;
/// Moments shorter than this are treated as lines through the origin.
pub const DEGENERATE_MOMENT: f64 = 1e-9;
/// Tolerance on `|v| = 1` and `n·v = 0` when validating Plücker coordinates.
pub const PLUCKER_TOL: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LineError {
    #[error("line direction has zero length (|d| = {0:e})")]
    ZeroDirection(f64),
    #[error("invalid Plücker coordinates: |v| = {norm}, n·v = {dot:e}")]
    InvalidPlucker { norm: f64, dot: f64 },
}

/// Skew-symmetric matrix `[v]×` with `[v]× b = v × b`.
pub fn skew(v: &Vec3) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Inverse of [`skew`] applied to the antisymmetric part of `m`, times two.
fn vee_antisym(m: &Matrix3<f64>) -> Vec3 {
    Vec3::new(
        m[(2, 1)] - m[(1, 2)],
        m[(0, 2)] - m[(2, 0)],
        m[(1, 0)] - m[(0, 1)],
    )
}

/// SO(3) exponential (Rodrigues).
pub fn rot_exp(omega: &Vec3) -> Rotation {
    let theta2 = omega.norm_squared();
    let theta = theta2.sqrt();
    let k = skew(omega);
    let (a, b) = if theta < SMALL_ANGLE {
        (1.0 - theta2 / 6.0, 0.5 - theta2 / 24.0)
    } else {
        let half_sin = (0.5 * theta).sin();
        (theta.sin() / theta, 2.0 * half_sin * half_sin / theta2)
    };
    Rotation::from_matrix_unchecked(Matrix3::identity() + k * a + k * k * b)
}

/// SO(3) logarithm, returning the rotation vector with `|ω| ≤ π`.
///
/// At exactly π the axis sign is fixed so that its first nonzero component
/// is positive.
pub fn rot_log(r: &Rotation) -> Vec3 {
    let m = r.matrix();
    let w = vee_antisym(m);
    let s = 0.5 * w.norm();
    let c = 0.5 * (m.trace() - 1.0);
    let theta = s.atan2(c);

    if c < 0.0 {
        // (R + Rᵀ)/2 - cos θ·I = (1 - cos θ)·a·aᵀ
        let b = (m + m.transpose()) * 0.5 - Matrix3::identity() * c;
        let i = (0..3)
            .max_by(|&p, &q| b[(p, p)].total_cmp(&b[(q, q)]))
            .unwrap_or(0);
        let col: Vec3 = b.column(i).into_owned();
        let mut axis = col / col.norm();
        if s < 1e-12 {
            axis = canonical_axis(axis);
        } else if w.dot(&axis) < 0.0 {
            axis = -axis;
        }
        return axis * theta;
    }

    let factor = if theta < SMALL_ANGLE {
        0.5 * (1.0 + theta * theta / 6.0)
    } else {
        0.5 * theta / s
    };
    w * factor
}

fn canonical_axis(axis: Vec3) -> Vec3 {
    match axis.iter().find(|c| c.abs() > 1e-12) {
        Some(&c) if c < 0.0 => -axis,
        _ => axis,
    }
}

/// Re-project a nearly orthonormal rotation back onto SO(3).
pub fn renormalize(r: &Rotation) -> Rotation {
    let q = UnitQuaternion::from_rotation_matrix(r).into_inner();
    UnitQuaternion::new_normalize(q).to_rotation_matrix()
}

/// Rigid transform: rotation plus translation (millimeters).
///
/// `Pose { rotation: R, translation: P }` maps a point `x` in the child frame
/// to `R·x + P` in the parent frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    pub rotation: Rotation,
    pub translation: Vec3,
}

impl Pose {
    pub fn new(rotation: Rotation, translation: Vec3) -> Self {
        Self {
            rotation,
            translation,
        }
    }

    pub fn identity() -> Self {
        Self::new(Rotation::identity(), Vec3::zeros())
    }

    pub fn transform_point(&self, p: &Vec3) -> Vec3 {
        self.rotation * p + self.translation
    }

    /// `self · other`
    pub fn compose(&self, other: &Pose) -> Pose {
        Pose::new(
            self.rotation * other.rotation,
            self.rotation * other.translation + self.translation,
        )
    }

    pub fn inverse(&self) -> Pose {
        let rt = self.rotation.transpose();
        Pose::new(rt, -(rt * self.translation))
    }
}

impl Default for Pose {
    fn default() -> Self {
        Self::identity()
    }
}

/// 3D line in Plücker coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PluckerLine {
    /// Unit direction.
    pub v: Vec3,
    /// Moment `p0 × v` (millimeters).
    pub n: Vec3,
}

impl PluckerLine {
    /// Validating constructor.
    pub fn new(v: Vec3, n: Vec3) -> Result<Self, LineError> {
        let norm = v.norm();
        let dot = n.dot(&v);
        if !(norm - 1.0).abs().le(&PLUCKER_TOL) || !dot.abs().le(&PLUCKER_TOL) {
            return Err(LineError::InvalidPlucker { norm, dot });
        }
        Ok(Self { v, n })
    }

    /// Line through `p0` along `d`.
    pub fn from_point_dir(p0: &Vec3, d: &Vec3) -> Result<Self, LineError> {
        let len = d.norm();
        if !(len > 1e-12) {
            return Err(LineError::ZeroDirection(len));
        }
        let v = d / len;
        Ok(Self { v, n: p0.cross(&v) })
    }

    /// Point on the line closest to the origin.
    pub fn closest_point(&self) -> Vec3 {
        self.v.cross(&self.n)
    }

    /// Euclidean distance from `p` to the line.
    pub fn distance(&self, p: &Vec3) -> f64 {
        point_line_error(p, self).norm()
    }

    /// Same point set with the direction reversed.
    pub fn flipped(&self) -> Self {
        Self {
            v: -self.v,
            n: -self.n,
        }
    }

    pub fn to_orthonormal(&self) -> OrthonormalLine {
        to_orthonormal(self)
    }
}

/// Minimal line parameters `φ = (ω, m)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OrthonormalLine {
    /// Rotation vector of `U`.
    pub omega: Vec3,
    /// Distance of the line from the origin (millimeters), `m ≥ 0`.
    pub m: f64,
}

impl OrthonormalLine {
    pub fn new(omega: Vec3, m: f64) -> Self {
        Self { omega, m }
    }

    /// Build from the basis `U` directly; negative `m` flips `u2`/`u3`.
    pub fn from_basis(u: &Rotation, m: f64) -> Self {
        if m < 0.0 {
            let flip = Rotation::from_matrix_unchecked(Matrix3::from_diagonal(&Vec3::new(
                1.0, -1.0, -1.0,
            )));
            Self::new(rot_log(&renormalize(&(u * flip))), -m)
        } else {
            Self::new(rot_log(u), m)
        }
    }

    /// `U = Exp(ω)`.
    pub fn basis(&self) -> Rotation {
        rot_exp(&self.omega)
    }

    pub fn to_plucker(&self) -> PluckerLine {
        from_orthonormal(self)
    }

    pub fn as_array(&self) -> [f64; 4] {
        [self.omega.x, self.omega.y, self.omega.z, self.m]
    }
}

/// Unit vector orthogonal to `v`, built by Gram-Schmidt against the
/// coordinate axis of `v`'s smallest-magnitude component.
pub fn orthogonal_completion(v: &Vec3) -> Vec3 {
    let k = v.iamin();
    let mut e = Vec3::zeros();
    e[k] = 1.0;
    let u = e - v * v.dot(&e);
    u / u.norm()
}

/// Plücker → orthonormal form.
pub fn to_orthonormal(l: &PluckerLine) -> OrthonormalLine {
    let v = l.v / l.v.norm();
    let m = l.n.norm();
    let u2 = if m < DEGENERATE_MOMENT {
        orthogonal_completion(&v)
    } else {
        let n_perp = l.n - v * l.n.dot(&v);
        n_perp / n_perp.norm()
    };
    let u3 = v.cross(&u2);
    let u = Rotation::from_matrix_unchecked(Matrix3::from_columns(&[v, u2, u3]));
    OrthonormalLine::new(rot_log(&u), m)
}

/// Orthonormal form → Plücker: `v = U e1`, `n = m U e2`.
pub fn from_orthonormal(phi: &OrthonormalLine) -> PluckerLine {
    let u = phi.basis();
    let m = u.matrix();
    PluckerLine {
        v: m.column(0).into_owned(),
        n: m.column(1).into_owned() * phi.m,
    }
}

/// Point-to-line error vector `p × v − n`; its norm is the distance.
pub fn point_line_error(p: &Vec3, l: &PluckerLine) -> Vec3 {
    p.cross(&l.v) - l.n
}
