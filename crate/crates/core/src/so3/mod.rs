//! Rotation representations on SO(3).
//!
//! Three interchangeable forms are supported: rotation matrices
//! ([`RotMatrix`]), unit quaternions ([`Quaternion`]) and rotation vectors
//! ([`AxisAngle`]). Conversions out of a matrix canonicalize (quaternions to
//! `w ≥ 0`, axis-angle to an angle in `[0, π]`); losses operate on values as
//! given, so the double cover of quaternions stays visible to MSE.
//!
//! Unconstrained regression outputs ([`RawMatrix`], unnormalized quaternions,
//! arbitrary rotation vectors) are mapped onto SO(3) by
//! [`Representation::decode_with_state`], which also carries what is needed
//! to backpropagate through that mapping.

mod axis_angle;
mod distance;
mod matrix;
mod quaternion;
mod repr;

use std::ops::Index;

use rand::Rng;
use rand_distr::StandardNormal;

pub use axis_angle::{AxisAngle, SMALL_ANGLE};
pub use distance::{
    chordal_distance, geodesic_distance, geodesic_gradient, geodesic_loss, rotation_angle,
    GUARD_BAND,
};
pub use matrix::{
    orthonormality_error, svd_orthogonalize, Projection, RawMatrix, RotMatrix, ORTHO_TOL, RANK_TOL,
};
pub use quaternion::Quaternion;
pub use repr::{
    axis_angle_quat_jacobian, joint_loss, loss_gradients, loss_value, mse_loss,
    quat_matrix_partials, DecodedRotation, EncodedRotations, LossGradient, LossKind,
    Representation,
};

/// One rotation in any of the supported forms.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Rotation {
    Matrix(RotMatrix),
    Quaternion(Quaternion),
    AxisAngle(AxisAngle),
}

impl Rotation {
    pub fn representation(&self) -> Representation {
        match self {
            Rotation::Matrix(_) => Representation::Matrix,
            Rotation::Quaternion(_) => Representation::Quaternion,
            Rotation::AxisAngle(_) => Representation::AxisAngle,
        }
    }

    pub fn to_matrix(&self) -> RotMatrix {
        match self {
            Rotation::Matrix(m) => *m,
            Rotation::Quaternion(q) => q.to_rotation(),
            Rotation::AxisAngle(a) => a.to_rotation(),
        }
    }

    /// Converts to `target`, canonicalizing the output.
    pub fn convert(&self, target: Representation) -> Rotation {
        match (self, target) {
            (Rotation::Quaternion(q), Representation::AxisAngle) => {
                Rotation::AxisAngle(AxisAngle::from_quaternion(q))
            }
            (Rotation::AxisAngle(a), Representation::Quaternion) => {
                Rotation::Quaternion(a.to_quaternion().canonical())
            }
            (_, Representation::Matrix) => Rotation::Matrix(self.to_matrix()),
            (_, Representation::Quaternion) => {
                Rotation::Quaternion(Quaternion::from_rotation(&self.to_matrix()))
            }
            (_, Representation::AxisAngle) => {
                Rotation::AxisAngle(AxisAngle::from_rotation(&self.to_matrix()))
            }
        }
    }
}

/// Parent-relative rotations of every joint of a kinematic tree, in joint
/// order. The root entry is the global orientation of the body.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct JointRotations(Vec<RotMatrix>);

impl JointRotations {
    pub fn new(rotations: Vec<RotMatrix>) -> Self {
        JointRotations(rotations)
    }

    pub fn identity(joints: usize) -> Self {
        JointRotations(vec![RotMatrix::identity(); joints])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, RotMatrix> {
        self.0.iter()
    }

    pub fn as_slice(&self) -> &[RotMatrix] {
        &self.0
    }

    pub fn as_mut_slice(&mut self) -> &mut [RotMatrix] {
        &mut self.0
    }

    pub fn into_vec(self) -> Vec<RotMatrix> {
        self.0
    }

    /// Keeps the first `joints` entries and appends identities up to
    /// `joints`. Missing joints (e.g. hands a model does not predict) are
    /// treated as resting in the template pose.
    pub fn padded_to(&self, joints: usize) -> JointRotations {
        let mut v: Vec<RotMatrix> = self.0.iter().take(joints).copied().collect();
        v.resize(joints, RotMatrix::identity());
        JointRotations(v)
    }
}

impl Index<usize> for JointRotations {
    type Output = RotMatrix;

    fn index(&self, k: usize) -> &RotMatrix {
        &self.0[k]
    }
}

impl FromIterator<RotMatrix> for JointRotations {
    fn from_iter<I: IntoIterator<Item = RotMatrix>>(iter: I) -> Self {
        JointRotations(iter.into_iter().collect())
    }
}

impl<'a> IntoIterator for &'a JointRotations {
    type Item = &'a RotMatrix;
    type IntoIter = std::slice::Iter<'a, RotMatrix>;

    fn into_iter(self) -> Self::IntoIter {
        self.0.iter()
    }
}

/// Uniformly distributed unit quaternion (normalized 4D Gaussian).
pub fn random_quaternion<R: Rng + ?Sized>(rng: &mut R) -> Quaternion {
    loop {
        let q = Quaternion::new(
            rng.sample(StandardNormal),
            rng.sample(StandardNormal),
            rng.sample(StandardNormal),
            rng.sample(StandardNormal),
        );
        if q.norm() > 1e-6 {
            return q.normalized();
        }
    }
}

/// Uniformly distributed rotation.
pub fn random_rotation<R: Rng + ?Sized>(rng: &mut R) -> RotMatrix {
    random_quaternion(rng).to_rotation()
}

/// Uniform rotation conditioned on an angle of at most `max_angle`
/// (rejection sampling).
pub fn random_rotation_within<R: Rng + ?Sized>(rng: &mut R, max_angle: f64) -> Quaternion {
    loop {
        let q = random_quaternion(rng).canonical();
        if 2.0 * q.vector().norm().atan2(q.w) <= max_angle {
            return q;
        }
    }
}
