//! Registration error measures.
//!
//! Rotation errors are per-axis differences of XYZ Euler angles in degrees,
//! using `R = Rz(γ)·Ry(β)·Rx(α)` and reporting `(α, β, γ)`. Differences are
//! wrapped to the shortest signed angle before the absolute value is taken.

use nalgebra::{Matrix3, Vector3};

/// Within this distance of ±90° pitch the yaw/roll split is ill-conditioned.
pub const GIMBAL_LOCK_EPS_DEG: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EulerXyz {
    /// (x, y, z) angles in degrees.
    pub angles: [f64; 3],
    pub gimbal_locked: bool,
}

/// Decomposes a rotation into XYZ Euler angles (degrees).
pub fn euler_xyz_deg(r: &Matrix3<f64>) -> EulerXyz {
    let sin_pitch = (-r[(2, 0)]).clamp(-1.0, 1.0);
    let pitch = sin_pitch.asin();
    let locked = (pitch.to_degrees().abs() - 90.0).abs() < GIMBAL_LOCK_EPS_DEG;
    let (roll, yaw) = if locked {
        // Only roll ∓ yaw is observable; put all of it on roll.
        let roll = if sin_pitch > 0.0 {
            r[(0, 1)].atan2(r[(1, 1)])
        } else {
            (-r[(0, 1)]).atan2(r[(1, 1)])
        };
        (roll, 0.0)
    } else {
        (r[(2, 1)].atan2(r[(2, 2)]), r[(1, 0)].atan2(r[(0, 0)]))
    };
    EulerXyz {
        angles: [roll.to_degrees(), pitch.to_degrees(), yaw.to_degrees()],
        gimbal_locked: locked,
    }
}

fn wrap_deg(a: f64) -> f64 {
    let w = (a + 180.0).rem_euclid(360.0) - 180.0;
    if w == -180.0 {
        180.0
    } else {
        w
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RotationError {
    /// Absolute per-axis Euler differences, degrees.
    pub per_axis_deg: [f64; 3],
    /// True if either argument sits in the gimbal-lock band.
    pub gimbal_locked: bool,
}

pub fn rotation_error(r_est: &Matrix3<f64>, r_gt: &Matrix3<f64>) -> RotationError {
    let a = euler_xyz_deg(r_est);
    let b = euler_xyz_deg(r_gt);
    let mut per_axis_deg = [0.0; 3];
    for k in 0..3 {
        per_axis_deg[k] = wrap_deg(a.angles[k] - b.angles[k]).abs();
    }
    RotationError {
        per_axis_deg,
        gimbal_locked: a.gimbal_locked || b.gimbal_locked,
    }
}

/// Per-axis absolute translation difference, meters.
pub fn translation_error(t_est: &Vector3<f64>, t_gt: &Vector3<f64>) -> [f64; 3] {
    let d = t_est - t_gt;
    [d.x.abs(), d.y.abs(), d.z.abs()]
}

/// Angle of the relative rotation `R_estᵀ R_gt`, degrees. Uses
/// `atan2(sin, cos)` so tiny angles keep full precision.
pub fn geodesic_angle_deg(r_est: &Matrix3<f64>, r_gt: &Matrix3<f64>) -> f64 {
    let rel = r_est.transpose() * r_gt;
    let axis = Vector3::new(rel[(2, 1)] - rel[(1, 2)], rel[(0, 2)] - rel[(2, 0)], rel[(1, 0)] - rel[(0, 1)]);
    let sin = axis.norm() / 2.0;
    let cos = (rel.trace() - 1.0) / 2.0;
    sin.atan2(cos).to_degrees()
}

/// Root mean square over every component of every sample.
pub fn rmse<const D: usize>(samples: &[[f64; D]]) -> f64 {
    let n = samples.len() * D;
    if n == 0 {
        return f64::NAN;
    }
    let ss: f64 = samples.iter().flat_map(|s| s.iter()).map(|v| v * v).sum();
    (ss / n as f64).sqrt()
}

/// Mean absolute value over every component of every sample.
pub fn mae<const D: usize>(samples: &[[f64; D]]) -> f64 {
    let n = samples.len() * D;
    if n == 0 {
        return f64::NAN;
    }
    samples.iter().flat_map(|s| s.iter()).map(|v| v.abs()).sum::<f64>() / n as f64
}
