use nalgebra::Vector3;

use super::matrix::RotMatrix;
use super::quaternion::Quaternion;

/// Angles below this decode to the identity.
pub const SMALL_ANGLE: f64 = 1e-12;

/// Compact rotation vector `v = ω·α`: unit axis times angle in radians.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AxisAngle(pub Vector3<f64>);

impl AxisAngle {
    pub fn new(v: Vector3<f64>) -> Self {
        AxisAngle(v)
    }

    pub fn from_axis_angle(axis: &Vector3<f64>, angle: f64) -> Self {
        let n = axis.norm();
        if n == 0.0 {
            return AxisAngle(Vector3::zeros());
        }
        AxisAngle(axis * (angle / n))
    }

    pub fn vector(&self) -> &Vector3<f64> {
        &self.0
    }

    pub fn angle(&self) -> f64 {
        self.0.norm()
    }

    /// Unit axis, or `None` for the zero rotation.
    pub fn axis(&self) -> Option<Vector3<f64>> {
        let a = self.angle();
        (a >= SMALL_ANGLE).then(|| self.0 / a)
    }

    pub fn to_quaternion(&self) -> Quaternion {
        let angle = self.angle();
        if angle < SMALL_ANGLE {
            return Quaternion::identity();
        }
        let half = 0.5 * angle;
        let s = half.sin() / angle;
        Quaternion::new(half.cos(), self.0.x * s, self.0.y * s, self.0.z * s)
    }

    /// Inverse of [`AxisAngle::to_quaternion`]; the angle lands in `[0, π]`.
    pub fn from_quaternion(q: &Quaternion) -> AxisAngle {
        let q = q.normalized().canonical();
        let v = q.vector();
        let n = v.norm();
        if n == 0.0 {
            return AxisAngle(Vector3::zeros());
        }
        let angle = 2.0 * n.atan2(q.w);
        AxisAngle(v * (angle / n))
    }

    pub fn to_rotation(&self) -> RotMatrix {
        self.to_quaternion().to_rotation()
    }

    pub fn from_rotation(r: &RotMatrix) -> AxisAngle {
        AxisAngle::from_quaternion(&Quaternion::from_rotation(r))
    }

    /// Equivalent vector with angle in `[0, π]`.
    pub fn canonical(&self) -> AxisAngle {
        AxisAngle::from_quaternion(&self.to_quaternion())
    }
}
