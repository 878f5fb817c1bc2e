use std::ops::{Mul, Neg};

use nalgebra::{Matrix3, Vector3};

use super::matrix::{orthonormality_error, RotMatrix, ORTHO_TOL};
use crate::error::{Error, Result};

/// Quaternion `w + xi + yj + zk`. Rotations use unit quaternions; `q` and
/// `-q` encode the same rotation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Quaternion {
    pub w: f64,
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Quaternion {
    pub const fn new(w: f64, x: f64, y: f64, z: f64) -> Self {
        Quaternion { w, x, y, z }
    }

    pub const fn identity() -> Self {
        Quaternion::new(1.0, 0.0, 0.0, 0.0)
    }

    pub fn from_array(a: [f64; 4]) -> Self {
        Quaternion::new(a[0], a[1], a[2], a[3])
    }

    pub fn to_array(self) -> [f64; 4] {
        [self.w, self.x, self.y, self.z]
    }

    pub fn vector(&self) -> Vector3<f64> {
        Vector3::new(self.x, self.y, self.z)
    }

    pub fn norm(&self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn dot(&self, o: &Quaternion) -> f64 {
        self.w * o.w + self.x * o.x + self.y * o.y + self.z * o.z
    }

    /// Unit quaternion in the same direction; the identity for a (near) zero
    /// input.
    pub fn normalized(&self) -> Quaternion {
        let n = self.norm();
        if !(n > 1e-300) {
            return Quaternion::identity();
        }
        Quaternion::new(self.w / n, self.x / n, self.y / n, self.z / n)
    }

    pub fn conjugate(&self) -> Quaternion {
        Quaternion::new(self.w, -self.x, -self.y, -self.z)
    }

    /// Representative with `w ≥ 0` (ties broken on the first non-zero
    /// vector component).
    pub fn canonical(&self) -> Quaternion {
        let flip = if self.w != 0.0 {
            self.w < 0.0
        } else if self.x != 0.0 {
            self.x < 0.0
        } else if self.y != 0.0 {
            self.y < 0.0
        } else {
            self.z < 0.0
        };
        if flip {
            -*self
        } else {
            *self
        }
    }

    /// Rotation matrix of the normalized quaternion.
    pub fn to_rotation(&self) -> RotMatrix {
        let q = self.normalized();
        RotMatrix::from_matrix_unchecked(unit_quat_matrix(&q))
    }

    /// Shepperd's method; the result is canonicalized to `w ≥ 0`.
    pub fn from_rotation(r: &RotMatrix) -> Quaternion {
        let m = r.matrix();
        let trace = m.trace();
        let (m00, m11, m22) = (m[(0, 0)], m[(1, 1)], m[(2, 2)]);
        let q = if trace >= m00 && trace >= m11 && trace >= m22 {
            let s = 2.0 * (1.0 + trace).sqrt();
            Quaternion::new(
                0.25 * s,
                (m[(2, 1)] - m[(1, 2)]) / s,
                (m[(0, 2)] - m[(2, 0)]) / s,
                (m[(1, 0)] - m[(0, 1)]) / s,
            )
        } else if m00 >= m11 && m00 >= m22 {
            let s = 2.0 * (1.0 + m00 - m11 - m22).sqrt();
            Quaternion::new(
                (m[(2, 1)] - m[(1, 2)]) / s,
                0.25 * s,
                (m[(0, 1)] + m[(1, 0)]) / s,
                (m[(0, 2)] + m[(2, 0)]) / s,
            )
        } else if m11 >= m22 {
            let s = 2.0 * (1.0 + m11 - m00 - m22).sqrt();
            Quaternion::new(
                (m[(0, 2)] - m[(2, 0)]) / s,
                (m[(0, 1)] + m[(1, 0)]) / s,
                0.25 * s,
                (m[(1, 2)] + m[(2, 1)]) / s,
            )
        } else {
            let s = 2.0 * (1.0 + m22 - m00 - m11).sqrt();
            Quaternion::new(
                (m[(1, 0)] - m[(0, 1)]) / s,
                (m[(0, 2)] + m[(2, 0)]) / s,
                (m[(1, 2)] + m[(2, 1)]) / s,
                0.25 * s,
            )
        };
        q.normalized().canonical()
    }

    /// Like [`Quaternion::from_rotation`] but validates an arbitrary matrix
    /// first.
    pub fn try_from_matrix(m: &Matrix3<f64>) -> Result<Quaternion> {
        let ortho_err = orthonormality_error(m);
        let det = m.determinant();
        if !(ortho_err < ORTHO_TOL && (det - 1.0).abs() < ORTHO_TOL) {
            return Err(Error::NotOrthonormal { ortho_err, det });
        }
        Ok(Quaternion::from_rotation(&RotMatrix::from_matrix_unchecked(*m)))
    }

    pub fn rotate(&self, v: &Vector3<f64>) -> Vector3<f64> {
        let p = Quaternion::new(0.0, v.x, v.y, v.z);
        (*self * p * self.conjugate()).vector()
    }

    /// Shortest-path spherical interpolation between unit quaternions.
    pub fn slerp(&self, other: &Quaternion, t: f64) -> Quaternion {
        let mut b = *other;
        let mut cos = self.dot(&b);
        if cos < 0.0 {
            b = -b;
            cos = -cos;
        }
        if cos > 1.0 - 1e-12 {
            let lerp = Quaternion::new(
                self.w + t * (b.w - self.w),
                self.x + t * (b.x - self.x),
                self.y + t * (b.y - self.y),
                self.z + t * (b.z - self.z),
            );
            return lerp.normalized();
        }
        // Angle from atan2 keeps precision when the two are nearly antipodal
        // on the 3-sphere after the sign flip.
        let sin = (1.0 - cos * cos).max(0.0).sqrt();
        let theta = sin.atan2(cos);
        let wa = ((1.0 - t) * theta).sin() / sin;
        let wb = (t * theta).sin() / sin;
        Quaternion::new(
            wa * self.w + wb * b.w,
            wa * self.x + wb * b.x,
            wa * self.y + wb * b.y,
            wa * self.z + wb * b.z,
        )
        .normalized()
    }

    /// Rotation angle between two unit quaternions, insensitive to sign.
    pub fn angle_to(&self, other: &Quaternion) -> f64 {
        let rel = self.conjugate() * *other;
        2.0 * rel.vector().norm().atan2(rel.w.abs())
    }
}

/// Rotation matrix of a unit quaternion (no normalization).
pub(crate) fn unit_quat_matrix(q: &Quaternion) -> Matrix3<f64> {
    let Quaternion { w, x, y, z } = *q;
    Matrix3::new(
        1.0 - 2.0 * (y * y + z * z),
        2.0 * (x * y - w * z),
        2.0 * (x * z + w * y),
        2.0 * (x * y + w * z),
        1.0 - 2.0 * (x * x + z * z),
        2.0 * (y * z - w * x),
        2.0 * (x * z - w * y),
        2.0 * (y * z + w * x),
        1.0 - 2.0 * (x * x + y * y),
    )
}

impl Neg for Quaternion {
    type Output = Quaternion;

    fn neg(self) -> Quaternion {
        Quaternion::new(-self.w, -self.x, -self.y, -self.z)
    }
}

impl Mul for Quaternion {
    type Output = Quaternion;

    fn mul(self, o: Quaternion) -> Quaternion {
        Quaternion::new(
            self.w * o.w - self.x * o.x - self.y * o.y - self.z * o.z,
            self.w * o.x + self.x * o.w + self.y * o.z - self.z * o.y,
            self.w * o.y - self.x * o.z + self.y * o.w + self.z * o.x,
            self.w * o.z + self.x * o.y - self.y * o.x + self.z * o.w,
        )
    }
}
