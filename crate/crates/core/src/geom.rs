//! Vectors and rotations in the head frame.
//!
//! Head frame convention: `x` points posterior to anterior, `y` right to
//! left and `z` inferior to superior. Sensor orientations are given as
//! sensor-to-head rotation matrices, so a reading `v_s` in the sensor
//! frame maps to `R * v_s` in the head frame.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Three-component vector; units depend on context (rad/s, m/s², m).
pub type Vec3 = Vector3<f64>;

/// Orthonormality tolerance for rotation matrices.
pub const ROTATION_TOL: f64 = 1e-9;

/// Proper rotation matrix (orthonormal, determinant +1).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RotationMatrix(Matrix3<f64>);

impl RotationMatrix {
    pub fn identity() -> Self {
        RotationMatrix(Matrix3::identity())
    }

    /// Validates `m` and wraps it.
    pub fn new(m: Matrix3<f64>) -> Result<Self> {
        if m.iter().any(|v| !v.is_finite()) {
            return Err(Error::Config("rotation matrix has non-finite entries".into()));
        }
        let err = (m.transpose() * m - Matrix3::identity()).abs().max();
        if err > ROTATION_TOL {
            return Err(Error::Config(format!(
                "rotation matrix is not orthonormal (max |RᵀR - I| = {err:.3e})"
            )));
        }
        let det = m.determinant();
        if (det - 1.0).abs() > ROTATION_TOL {
            return Err(Error::Config(format!(
                "rotation matrix determinant is {det:.12}, expected +1"
            )));
        }
        Ok(RotationMatrix(m))
    }

    /// Builds from row-major rows.
    pub fn from_rows(rows: [[f64; 3]; 3]) -> Result<Self> {
        Self::new(Matrix3::from_fn(|i, j| rows[i][j]))
    }

    /// Right-handed rotation of `angle` radians about `axis`.
    pub fn from_axis_angle(axis: Vec3, angle: f64) -> Result<Self> {
        let n = axis.norm();
        if !(n > 0.0) || !n.is_finite() {
            return Err(Error::Invalid("rotation axis must be non-zero".into()));
        }
        let unit = nalgebra::Unit::new_unchecked(axis / n);
        Ok(RotationMatrix(
            *nalgebra::Rotation3::from_axis_angle(&unit, angle).matrix(),
        ))
    }

    pub fn rows(&self) -> [[f64; 3]; 3] {
        let m = &self.0;
        [
            [m[(0, 0)], m[(0, 1)], m[(0, 2)]],
            [m[(1, 0)], m[(1, 1)], m[(1, 2)]],
            [m[(2, 0)], m[(2, 1)], m[(2, 2)]],
        ]
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.0
    }

    pub fn transpose(&self) -> Self {
        RotationMatrix(self.0.transpose())
    }

    pub fn apply(&self, v: &Vec3) -> Vec3 {
        self.0 * v
    }

    pub fn compose(&self, other: &RotationMatrix) -> RotationMatrix {
        RotationMatrix(self.0 * other.0)
    }
}

impl Default for RotationMatrix {
    fn default() -> Self {
        Self::identity()
    }
}

impl Serialize for RotationMatrix {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.rows().serialize(s)
    }
}

impl<'de> Deserialize<'de> for RotationMatrix {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let rows = <[[f64; 3]; 3]>::deserialize(d)?;
        RotationMatrix::from_rows(rows).map_err(serde::de::Error::custom)
    }
}

/// Area of the triangle spanned by three points.
pub fn triangle_area(a: &Vec3, b: &Vec3, c: &Vec3) -> f64 {
    0.5 * (b - a).cross(&(c - a)).norm()
}

/// Skew-symmetric cross-product matrix: `skew(r) * v == r × v`.
pub fn skew(r: &Vec3) -> Matrix3<f64> {
    Matrix3::new(0.0, -r.z, r.y, r.z, 0.0, -r.x, -r.y, r.x, 0.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn rejects_scaled_matrix() {
        let m = Matrix3::identity() * 1.01;
        assert!(matches!(RotationMatrix::new(m), Err(Error::Config(_))));
    }

    #[test]
    fn rejects_reflection() {
        let m = Matrix3::from_diagonal(&Vec3::new(1.0, 1.0, -1.0));
        assert!(RotationMatrix::new(m).is_err());
    }

    #[test]
    fn quarter_turn_about_z() {
        let r = RotationMatrix::from_axis_angle(Vec3::z(), std::f64::consts::FRAC_PI_2).unwrap();
        let v = r.apply(&Vec3::x());
        assert_relative_eq!(v, Vec3::y(), epsilon = 1e-15);
    }

    #[test]
    fn skew_matches_cross() {
        let r = Vec3::new(0.3, -1.2, 2.0);
        let v = Vec3::new(-0.7, 0.4, 1.1);
        assert_relative_eq!(skew(&r) * v, r.cross(&v), epsilon = 1e-15);
    }

    #[test]
    fn json_is_row_major() {
        let r = RotationMatrix::from_rows([[0.0, -1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 1.0]])
            .unwrap();
        assert_relative_eq!(r.apply(&Vec3::x()), Vec3::y());
        let s = serde_json::to_string(&r).unwrap();
        assert_eq!(s, "[[0.0,-1.0,0.0],[1.0,0.0,0.0],[0.0,0.0,1.0]]");
        let back: RotationMatrix = serde_json::from_str(&s).unwrap();
        assert_eq!(back, r);
    }
}
