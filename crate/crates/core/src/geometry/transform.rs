use nalgebra::{Matrix3, Rotation3, Vector3};

use super::cloud::{Point, PointCloud};
use crate::error::{Error, Result};

const ORTHONORMAL_TOL: f64 = 1e-9;

/// Rotation in SO(3) plus translation (meters).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidTransform {
    rotation: Matrix3<f64>,
    translation: Vector3<f64>,
}

impl RigidTransform {
    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self> {
        let ortho = (rotation.transpose() * rotation - Matrix3::identity()).norm();
        if !(ortho < ORTHONORMAL_TOL) {
            return Err(Error::param(format!(
                "rotation is not orthonormal (|RᵀR − I|_F = {ortho:e})"
            )));
        }
        let det = rotation.determinant();
        if !((det - 1.0).abs() < ORTHONORMAL_TOL) {
            return Err(Error::param(format!("rotation determinant is {det}")));
        }
        if !translation.iter().all(|v| v.is_finite()) {
            return Err(Error::param("translation is not finite"));
        }
        Ok(Self {
            rotation,
            translation,
        })
    }

    /// Builds a transform from a rotation that is orthonormal up to round-off,
    /// re-projecting it onto SO(3).
    pub fn from_rotation_lossy(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Self {
        let projected = Rotation3::from_matrix_eps(&rotation, 1e-15, 64, Rotation3::identity());
        Self {
            rotation: *projected.matrix(),
            translation,
        }
    }

    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn from_translation(translation: Vector3<f64>) -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation,
        }
    }

    /// `R = Rz(z) · Ry(y) · Rx(x)`, angles in radians.
    pub fn from_euler_xyz(x: f64, y: f64, z: f64, translation: Vector3<f64>) -> Self {
        let rotation = Rotation3::from_euler_angles(x, y, z);
        Self {
            rotation: *rotation.matrix(),
            translation,
        }
    }

    pub fn from_axis_angle(axis: Vector3<f64>, angle: f64, translation: Vector3<f64>) -> Self {
        let rotation = Rotation3::from_axis_angle(&nalgebra::Unit::new_normalize(axis), angle);
        Self {
            rotation: *rotation.matrix(),
            translation,
        }
    }

    pub fn rotation(&self) -> &Matrix3<f64> {
        &self.rotation
    }

    pub fn translation(&self) -> &Vector3<f64> {
        &self.translation
    }

    pub fn apply_point(&self, p: &Point) -> Point {
        self.rotation * p + self.translation
    }

    pub fn invert(&self) -> Self {
        let rt = self.rotation.transpose();
        Self {
            rotation: rt,
            translation: -(rt * self.translation),
        }
    }

    /// `self ∘ other`: applies `other` first.
    pub fn compose(&self, other: &RigidTransform) -> Self {
        Self {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    /// Row-major rotation followed by translation (12 numbers).
    pub fn to_row_major(&self) -> [f64; 12] {
        let r = &self.rotation;
        let t = &self.translation;
        [
            r[(0, 0)],
            r[(0, 1)],
            r[(0, 2)],
            r[(1, 0)],
            r[(1, 1)],
            r[(1, 2)],
            r[(2, 0)],
            r[(2, 1)],
            r[(2, 2)],
            t.x,
            t.y,
            t.z,
        ]
    }

    pub fn from_row_major(v: &[f64; 12]) -> Result<Self> {
        let r = Matrix3::new(v[0], v[1], v[2], v[3], v[4], v[5], v[6], v[7], v[8]);
        let t = Vector3::new(v[9], v[10], v[11]);
        if let Ok(exact) = Self::new(r, t) {
            return Ok(exact);
        }
        // Rotations printed with few digits are re-projected onto SO(3).
        let probe = Self::from_rotation_lossy(r, t);
        if (probe.rotation - r).norm() > 1e-6 {
            return Err(Error::param("stored rotation is not a rotation matrix"));
        }
        Ok(probe)
    }
}

/// Applies `t` to every point; normals are rotated only.
pub fn apply_transform(cloud: &PointCloud, t: &RigidTransform) -> PointCloud {
    let points = cloud.points().iter().map(|p| t.apply_point(p)).collect();
    let normals = cloud
        .normals()
        .map(|n| n.iter().map(|v| t.rotation() * v).collect());
    PointCloud::from_parts_unchecked(points, normals)
}
