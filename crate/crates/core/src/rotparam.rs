//! Two-vector rotation parameterization, the 180° bin symmetry and the
//! angular/translation training losses.
//!
//! A rotation is described by unnormalized estimates of the bin z and y axes
//! in camera coordinates. Gram-Schmidt turns them into the columns
//! `(u_x, u_y, u_z)` of a proper rotation.

use nalgebra::{Matrix3, Vector3};
use thiserror::Error;

/// Minimum angle between `v_z` and `v_y` (radians) for a well-defined rotation.
pub const MIN_PARAM_ANGLE: f64 = 1e-6;

/// Direction pairs closer than this to aligned or antiparallel are treated as
/// non-differentiable points of the angular loss.
pub const NONDIFF_ANGLE: f64 = 1e-6;

#[derive(Debug, Error, PartialEq)]
pub enum ParamError {
    #[error("v_z is zero or not finite")]
    ZeroAxis,
    #[error("v_z and v_y are (nearly) parallel; the parameterization is degenerate")]
    Degenerate,
    #[error("loss weight lambda must be positive (got {0})")]
    BadLambda(f64),
    #[error("epsilon must lie in (0, 1e-6] (got {0})")]
    BadEpsilon(f64),
}

/// Unnormalized z and y axis estimates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RotationVectors {
    pub v_z: Vector3<f64>,
    pub v_y: Vector3<f64>,
}

impl RotationVectors {
    pub fn new(v_z: Vector3<f64>, v_y: Vector3<f64>) -> Self {
        Self { v_z, v_y }
    }
}

/// Gram-Schmidt: `u_z = v_z/|v_z|`, `w_y = v_y - <v_y|u_z> u_z`,
/// `u_y = w_y/|w_y|`, `u_x = u_y × u_z`.
pub fn rotation_from_vectors(rv: &RotationVectors) -> Result<Matrix3<f64>, ParamError> {
    let vz_norm = rv.v_z.norm();
    if !(vz_norm > 0.0) || !vz_norm.is_finite() {
        return Err(ParamError::ZeroAxis);
    }
    let vy_norm = rv.v_y.norm();
    if !(vy_norm > 0.0) || !vy_norm.is_finite() {
        return Err(ParamError::Degenerate);
    }
    let sin_angle = rv.v_z.cross(&rv.v_y).norm() / (vz_norm * vy_norm);
    if sin_angle <= MIN_PARAM_ANGLE.sin() {
        return Err(ParamError::Degenerate);
    }
    let u_z = rv.v_z / vz_norm;
    let w_y = rv.v_y - u_z * rv.v_y.dot(&u_z);
    let u_y = w_y / w_y.norm();
    let u_x = u_y.cross(&u_z);
    Ok(Matrix3::from_columns(&[u_x, u_y, u_z]))
}

/// Third and second columns of `r`.
pub fn vectors_from_rotation(r: &Matrix3<f64>) -> RotationVectors {
    RotationVectors {
        v_z: r.column(2).into_owned(),
        v_y: r.column(1).into_owned(),
    }
}

/// `diag(-1, -1, 1)`: the half turn about the bin z axis.
pub fn symmetry_rotation() -> Matrix3<f64> {
    Matrix3::from_diagonal(&Vector3::new(-1.0, -1.0, 1.0))
}

/// The other rotation describing the same bin placement: the bin turned by
/// 180° about its own z axis, i.e. `R · R_s` (first two columns negated).
pub fn symmetry_partner(r: &Matrix3<f64>) -> Matrix3<f64> {
    let mut out = *r;
    for row in 0..3 {
        out[(row, 0)] = -out[(row, 0)];
        out[(row, 1)] = -out[(row, 1)];
    }
    out
}

/// Picks the member of `{R, R·R_s}` whose second column has a positive
/// first entry; zero entries defer to the next entry down the column.
pub fn canonicalize_symmetry(r: &Matrix3<f64>) -> Matrix3<f64> {
    if second_column_positive(r) {
        *r
    } else {
        symmetry_partner(r)
    }
}

/// Sign rule on column 2: entry (1,2), then (2,2), then (3,2).
pub fn second_column_positive(r: &Matrix3<f64>) -> bool {
    for row in 0..2 {
        let v = r[(row, 1)];
        if v > 0.0 {
            return true;
        }
        if v < 0.0 {
            return false;
        }
    }
    r[(2, 1)] > 0.0
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossConfig {
    lambda: f64,
    epsilon: f64,
}

impl LossConfig {
    pub fn new(lambda: f64, epsilon: f64) -> Result<Self, ParamError> {
        if !(lambda > 0.0) || !lambda.is_finite() {
            return Err(ParamError::BadLambda(lambda));
        }
        if !(epsilon > 0.0 && epsilon <= 1e-6) {
            return Err(ParamError::BadEpsilon(epsilon));
        }
        Ok(Self { lambda, epsilon })
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            lambda: 1.0,
            epsilon: 1e-8,
        }
    }
}

/// `acos(<u|v> / (|u||v| + ε))` with the ratio clamped to `[-1, 1]`.
pub fn angular_loss(u: &Vector3<f64>, v: &Vector3<f64>, epsilon: f64) -> f64 {
    let ratio = u.dot(v) / (u.norm() * v.norm() + epsilon);
    ratio.clamp(-1.0, 1.0).acos()
}

/// Gradient of [`angular_loss`] with respect to `v`.
fn angular_loss_grad_v(u: &Vector3<f64>, v: &Vector3<f64>, epsilon: f64) -> Vector3<f64> {
    let nu = u.norm();
    let nv = v.norm();
    let denom = nu * nv + epsilon;
    let dot = u.dot(v);
    let ratio = dot / denom;
    // d(ratio)/dv = u/denom - dot * nu * v / (nv * denom²)
    let d_ratio = u / denom - v * (dot * nu / (nv * denom * denom));
    d_ratio * (-1.0 / (1.0 - ratio * ratio).sqrt())
}

/// Network output or training target: z axis, y axis and translation (mm).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PoseVectors {
    pub z: Vector3<f64>,
    pub y: Vector3<f64>,
    pub t: Vector3<f64>,
}

impl PoseVectors {
    pub fn new(z: Vector3<f64>, y: Vector3<f64>, t: Vector3<f64>) -> Self {
        Self { z, y, t }
    }

    /// Training target for a ground-truth pose: canonicalize, then read off
    /// the third and second columns.
    pub fn target_from_pose(rotation: &Matrix3<f64>, t: &Vector3<f64>) -> Self {
        let r = canonicalize_symmetry(rotation);
        let rv = vectors_from_rotation(&r);
        Self {
            z: rv.v_z,
            y: rv.v_y,
            t: *t,
        }
    }

    pub fn to_array(&self) -> [f64; 9] {
        [
            self.z.x, self.z.y, self.z.z, self.y.x, self.y.y, self.y.z, self.t.x, self.t.y,
            self.t.z,
        ]
    }

    pub fn from_array(a: &[f64; 9]) -> Self {
        Self {
            z: Vector3::new(a[0], a[1], a[2]),
            y: Vector3::new(a[3], a[4], a[5]),
            t: Vector3::new(a[6], a[7], a[8]),
        }
    }
}

/// Individual terms of the joint loss.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossTerms {
    pub rot_z: f64,
    pub rot_y: f64,
    /// Unweighted `Σ |t̂_i - t_i|`.
    pub translation_l1: f64,
    pub total: f64,
}

pub fn joint_loss_terms(pred: &PoseVectors, gt: &PoseVectors, cfg: &LossConfig) -> LossTerms {
    let rot_z = angular_loss(&gt.z, &pred.z, cfg.epsilon);
    let rot_y = angular_loss(&gt.y, &pred.y, cfg.epsilon);
    let translation_l1 = (gt.t - pred.t).abs().sum();
    LossTerms {
        rot_z,
        rot_y,
        translation_l1,
        total: rot_z + rot_y + cfg.lambda * translation_l1,
    }
}

/// `L = L_r(u_z, v_z) + L_r(u_y, v_y) + λ·L1(t̂, t)`.
pub fn joint_loss(pred: &PoseVectors, gt: &PoseVectors, cfg: &LossConfig) -> f64 {
    joint_loss_terms(pred, gt, cfg).total
}

/// Where the joint loss has no gradient.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum NonDifferentiable {
    #[error("predicted z direction is aligned or antiparallel with the target")]
    AxisZ,
    #[error("predicted y direction is aligned or antiparallel with the target")]
    AxisY,
    #[error("translation coordinate {0} equals the target")]
    Translation(usize),
    #[error("zero-length direction vector")]
    ZeroVector,
}

fn check_direction_pair(
    u: &Vector3<f64>,
    v: &Vector3<f64>,
    epsilon: f64,
    flag: NonDifferentiable,
) -> Result<(), NonDifferentiable> {
    let nu = u.norm();
    let nv = v.norm();
    if !(nu > 0.0) || !(nv > 0.0) {
        return Err(NonDifferentiable::ZeroVector);
    }
    let sin = u.cross(v).norm() / (nu * nv);
    if sin <= NONDIFF_ANGLE.sin() {
        return Err(flag);
    }
    let ratio = u.dot(v) / (nu * nv + epsilon);
    if ratio.abs() >= 1.0 {
        return Err(flag);
    }
    Ok(())
}

/// Analytic gradient of [`joint_loss`] with respect to the nine predicted
/// scalars, in [`PoseVectors::to_array`] order.
pub fn joint_loss_gradient(
    pred: &PoseVectors,
    gt: &PoseVectors,
    cfg: &LossConfig,
) -> Result<[f64; 9], NonDifferentiable> {
    check_direction_pair(&gt.z, &pred.z, cfg.epsilon, NonDifferentiable::AxisZ)?;
    check_direction_pair(&gt.y, &pred.y, cfg.epsilon, NonDifferentiable::AxisY)?;
    for i in 0..3 {
        if pred.t[i] == gt.t[i] {
            return Err(NonDifferentiable::Translation(i));
        }
    }
    let gz = angular_loss_grad_v(&gt.z, &pred.z, cfg.epsilon);
    let gy = angular_loss_grad_v(&gt.y, &pred.y, cfg.epsilon);
    let gt_ = (pred.t - gt.t).map(|d| cfg.lambda * d.signum());
    Ok([gz.x, gz.y, gz.z, gy.x, gy.y, gy.z, gt_.x, gt_.y, gt_.z])
}
