//! Rigid poses (bin space → scanner space) and their text file format.

use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::Path;

use nalgebra::{Matrix3, Matrix4, Point3, Vector3};
use thiserror::Error;

/// Element-wise tolerance on `RᵀR = I` and on `det R = 1`.
pub const ROTATION_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum PoseError {
    #[error("rotation block is not orthonormal (max |RᵀR - I| = {0:e})")]
    NotOrthonormal(f64),
    #[error("rotation block is improper (det = {0})")]
    Improper(f64),
    #[error("non-finite pose entry")]
    NonFinite,
    #[error("pose file must hold 16 numbers, found {0}")]
    WrongCount(usize),
    #[error("cannot parse pose entry {0:?}")]
    Parse(String),
    #[error("last row of a homogeneous pose must be 0 0 0 1")]
    BadLastRow,
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// A proper rigid transform. The rotation is checked against
/// [`ROTATION_TOLERANCE`] on construction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    rotation: Matrix3<f64>,
    translation: Vector3<f64>,
}

impl Pose {
    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self, PoseError> {
        validate_rotation(&rotation)?;
        if translation.iter().any(|v| !v.is_finite()) {
            return Err(PoseError::NonFinite);
        }
        Ok(Self {
            rotation,
            translation,
        })
    }

    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    /// Skips validation. Only for matrices that are rotations by construction.
    pub(crate) fn from_parts_unchecked(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Self {
        debug_assert!(validate_rotation(&rotation).is_ok());
        Self {
            rotation,
            translation,
        }
    }

    pub fn rotation(&self) -> &Matrix3<f64> {
        &self.rotation
    }

    pub fn translation(&self) -> &Vector3<f64> {
        &self.translation
    }

    pub fn transform_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    pub fn transform_vector(&self, v: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * v
    }

    pub fn inverse(&self) -> Self {
        let rt = self.rotation.transpose();
        Self {
            rotation: rt,
            translation: -(rt * self.translation),
        }
    }

    /// `self ∘ other`: applies `other` first.
    pub fn compose(&self, other: &Pose) -> Self {
        Self {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    pub fn with_rotation(&self, rotation: Matrix3<f64>) -> Result<Self, PoseError> {
        Self::new(rotation, self.translation)
    }

    pub fn to_homogeneous(&self) -> Matrix4<f64> {
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&self.rotation);
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.translation);
        m
    }

    pub fn from_homogeneous(m: &Matrix4<f64>) -> Result<Self, PoseError> {
        if m.iter().any(|v| !v.is_finite()) {
            return Err(PoseError::NonFinite);
        }
        if m[(3, 0)] != 0.0 || m[(3, 1)] != 0.0 || m[(3, 2)] != 0.0 || m[(3, 3)] != 1.0 {
            return Err(PoseError::BadLastRow);
        }
        Self::new(
            m.fixed_view::<3, 3>(0, 0).into_owned(),
            m.fixed_view::<3, 1>(0, 3).into_owned(),
        )
    }

    /// Row-major 4×4 in the pose file layout.
    pub fn to_row_major(&self) -> [f64; 16] {
        let m = self.to_homogeneous();
        let mut out = [0.0; 16];
        for r in 0..4 {
            for c in 0..4 {
                out[r * 4 + c] = m[(r, c)];
            }
        }
        out
    }

    pub fn from_row_major(values: &[f64]) -> Result<Self, PoseError> {
        if values.len() != 16 {
            return Err(PoseError::WrongCount(values.len()));
        }
        Self::from_homogeneous(&Matrix4::from_row_slice(values))
    }

    pub fn to_text(&self) -> String {
        let v = self.to_row_major();
        let mut s = String::new();
        for row in v.chunks(4) {
            let line: Vec<String> = row.iter().map(|x| format_number(*x)).collect();
            let _ = writeln!(s, "{}", line.join(" "));
        }
        s
    }

    pub fn parse_text(text: &str) -> Result<Self, PoseError> {
        let values = text
            .split_whitespace()
            .map(|t| {
                t.parse::<f64>()
                    .map_err(|_| PoseError::Parse(t.to_string()))
            })
            .collect::<Result<Vec<_>, _>>()?;
        Self::from_row_major(&values)
    }

    pub fn transform_point3(&self, p: &Point3<f64>) -> Point3<f64> {
        Point3::from(self.transform_point(&p.coords))
    }
}

/// Shortest text form that parses back to the same `f64`.
fn format_number(x: f64) -> String {
    if x == 0.0 {
        "0".to_string()
    } else {
        format!("{x}")
    }
}

pub fn validate_rotation(r: &Matrix3<f64>) -> Result<(), PoseError> {
    if r.iter().any(|v| !v.is_finite()) {
        return Err(PoseError::NonFinite);
    }
    let err = (r.transpose() * r - Matrix3::identity()).abs().max();
    if err > ROTATION_TOLERANCE {
        return Err(PoseError::NotOrthonormal(err));
    }
    let det = r.determinant();
    if (det - 1.0).abs() > ROTATION_TOLERANCE {
        return Err(PoseError::Improper(det));
    }
    Ok(())
}

pub fn load_pose(path: impl AsRef<Path>) -> Result<Pose, PoseError> {
    Pose::parse_text(&fs::read_to_string(path)?)
}

pub fn save_pose(pose: &Pose, path: impl AsRef<Path>) -> Result<(), PoseError> {
    fs::write(path, pose.to_text())?;
    Ok(())
}

/// Rotation about the x axis.
pub fn rot_x(angle: f64) -> Matrix3<f64> {
    let (s, c) = angle.sin_cos();
    Matrix3::new(1.0, 0.0, 0.0, 0.0, c, -s, 0.0, s, c)
}

/// Rotation about the y axis.
pub fn rot_y(angle: f64) -> Matrix3<f64> {
    let (s, c) = angle.sin_cos();
    Matrix3::new(c, 0.0, s, 0.0, 1.0, 0.0, -s, 0.0, c)
}

/// Rotation about the z axis.
pub fn rot_z(angle: f64) -> Matrix3<f64> {
    let (s, c) = angle.sin_cos();
    Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0)
}

/// Rotation by `angle` about a unit `axis` (Rodrigues).
pub fn axis_angle(axis: &Vector3<f64>, angle: f64) -> Matrix3<f64> {
    let k = axis.normalize();
    let kx = k.cross_matrix();
    Matrix3::identity() + kx * angle.sin() + kx * kx * (1.0 - angle.cos())
}
