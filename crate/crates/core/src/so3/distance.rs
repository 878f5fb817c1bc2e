use nalgebra::{Matrix3, Vector3};

use super::{JointRotations, RotMatrix};
use crate::error::{Error, Result};

/// Lower edge of the band in which the arccos derivative is used as is.
pub const GUARD_BAND: f64 = 1e-4;

/// Rotation angle of a (near) rotation matrix, in `[0, π]`.
///
/// `cos φ = (tr − 1)/2` is clamped to `[−1, 1]`; the angle itself comes from
/// `atan2(sin φ, cos φ)` with `sin φ` read off the skew part, which keeps full
/// precision at both ends of the range where a bare arccos loses half the
/// digits.
pub fn rotation_angle(rel: &Matrix3<f64>) -> f64 {
    let cos = ((rel.trace() - 1.0) * 0.5).clamp(-1.0, 1.0);
    let axial = Vector3::new(
        rel[(2, 1)] - rel[(1, 2)],
        rel[(0, 2)] - rel[(2, 0)],
        rel[(1, 0)] - rel[(0, 1)],
    );
    let sin = 0.5 * axial.norm();
    sin.atan2(cos)
}

/// Geodesic distance `arccos((tr(A·Bᵀ) − 1)/2)` on SO(3), in radians.
pub fn geodesic_distance(a: &RotMatrix, b: &RotMatrix) -> f64 {
    rotation_angle(&(a.matrix() * b.matrix().transpose()))
}

/// Frobenius distance between two rotation matrices.
pub fn chordal_distance(a: &RotMatrix, b: &RotMatrix) -> f64 {
    (a.matrix() - b.matrix()).norm()
}

/// Mean per-joint geodesic distance.
pub fn geodesic_loss(gt: &JointRotations, pred: &JointRotations) -> Result<f64> {
    if gt.len() != pred.len() {
        return Err(Error::mismatch("joint rotations", gt.len(), pred.len()));
    }
    if gt.is_empty() {
        return Err(Error::EmptySubset);
    }
    let sum: f64 = gt
        .iter()
        .zip(pred.iter())
        .map(|(a, b)| geodesic_distance(a, b))
        .sum();
    Ok(sum / gt.len() as f64)
}

/// Geodesic distance from `gt` to `pred` and its gradient with respect to the
/// entries of `pred`.
///
/// Inside `[GUARD_BAND, π − GUARD_BAND]` this is the exact derivative
/// `−gt / (2 sin φ)`. Outside, `1/sin φ` is frozen at `1/sin(GUARD_BAND)`,
/// i.e. the gradient of a surrogate that is linear in `1 − cos φ`
/// (quadratic in φ near zero) and meets the true loss with matching slope at
/// the band edge.
pub fn geodesic_gradient(gt: &RotMatrix, pred: &RotMatrix) -> (f64, Matrix3<f64>) {
    let phi = geodesic_distance(gt, pred);
    let sin = phi.sin().max(GUARD_BAND.sin());
    (phi, gt.matrix() * (-0.5 / sin))
}
