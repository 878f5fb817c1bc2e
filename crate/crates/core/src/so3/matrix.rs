use std::ops::Mul;

use nalgebra::{Matrix3, Vector3};

use crate::error::{Error, Result};

/// Tolerance used when validating that a matrix lies on SO(3).
pub const ORTHO_TOL: f64 = 1e-9;

/// Singular values below this make the nearest rotation non-unique.
pub const RANK_TOL: f64 = 1e-12;

/// A 3×3 rotation matrix (orthonormal, determinant +1).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RotMatrix(Matrix3<f64>);

impl Default for RotMatrix {
    fn default() -> Self {
        Self::identity()
    }
}

impl RotMatrix {
    pub fn identity() -> Self {
        RotMatrix(Matrix3::identity())
    }

    /// Validates `m` against the SO(3) tolerances.
    pub fn new(m: Matrix3<f64>) -> Result<Self> {
        let ortho_err = orthonormality_error(&m);
        let det = m.determinant();
        if !(ortho_err < ORTHO_TOL) || !((det - 1.0).abs() < ORTHO_TOL) {
            return Err(Error::NotOrthonormal { ortho_err, det });
        }
        Ok(RotMatrix(m))
    }

    /// Wraps `m` without checking. Callers guarantee `m ∈ SO(3)`.
    pub fn from_matrix_unchecked(m: Matrix3<f64>) -> Self {
        RotMatrix(m)
    }

    pub fn from_row_major(values: &[f64]) -> Result<Self> {
        if values.len() != 9 {
            return Err(Error::mismatch("rotation matrix entries", 9, values.len()));
        }
        Self::new(Matrix3::from_row_slice(values))
    }

    pub fn to_row_major(&self) -> [f64; 9] {
        let m = &self.0;
        [
            m[(0, 0)],
            m[(0, 1)],
            m[(0, 2)],
            m[(1, 0)],
            m[(1, 1)],
            m[(1, 2)],
            m[(2, 0)],
            m[(2, 1)],
            m[(2, 2)],
        ]
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.0
    }

    pub fn into_inner(self) -> Matrix3<f64> {
        self.0
    }

    /// Inverse rotation.
    pub fn transpose(&self) -> Self {
        RotMatrix(self.0.transpose())
    }

    pub fn rotate(&self, v: &Vector3<f64>) -> Vector3<f64> {
        self.0 * v
    }

    /// Rotation of `angle` radians about `axis` (need not be unit length).
    pub fn about_axis(axis: &Vector3<f64>, angle: f64) -> Self {
        let n = axis.norm();
        if n == 0.0 {
            return Self::identity();
        }
        super::AxisAngle::new(axis * (angle / n)).to_rotation()
    }
}

impl Mul for RotMatrix {
    type Output = RotMatrix;

    fn mul(self, rhs: RotMatrix) -> RotMatrix {
        RotMatrix(self.0 * rhs.0)
    }
}

impl Mul<&RotMatrix> for &RotMatrix {
    type Output = RotMatrix;

    fn mul(self, rhs: &RotMatrix) -> RotMatrix {
        RotMatrix(self.0 * rhs.0)
    }
}

/// ‖MᵀM − I‖_F
pub fn orthonormality_error(m: &Matrix3<f64>) -> f64 {
    (m.transpose() * m - Matrix3::identity()).norm()
}

/// Unconstrained 3×3 regression output.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RawMatrix(pub Matrix3<f64>);

impl RawMatrix {
    pub fn from_row_major(values: &[f64]) -> Result<Self> {
        if values.len() != 9 {
            return Err(Error::mismatch("raw matrix entries", 9, values.len()));
        }
        Ok(RawMatrix(Matrix3::from_row_slice(values)))
    }
}

/// Result of projecting a raw matrix onto SO(3).
///
/// Keeps the SVD factors so the projection can be differentiated without
/// decomposing again.
#[derive(Debug, Clone)]
pub struct Projection {
    pub rotation: RotMatrix,
    /// Set when the nearest rotation is not unique (rank deficiency, or a
    /// repeated smallest singular value on a reflection).
    pub degenerate: bool,
    pub singular_values: Vector3<f64>,
    u: Matrix3<f64>,
    v: Matrix3<f64>,
    signs: Vector3<f64>,
}

/// Nearest rotation in Frobenius norm: `U·diag(1,1,det(UVᵀ))·Vᵀ`, with the
/// sign correction applied to the smallest singular direction.
///
/// Non-finite input yields the identity, flagged degenerate.
pub fn svd_orthogonalize(a: &RawMatrix) -> Projection {
    if !a.0.iter().all(|x| x.is_finite()) {
        return Projection {
            rotation: RotMatrix::identity(),
            degenerate: true,
            singular_values: Vector3::zeros(),
            u: Matrix3::identity(),
            v: Matrix3::identity(),
            signs: Vector3::new(1.0, 1.0, 1.0),
        };
    }
    let svd = a.0.svd(true, true);
    let u = svd.u.expect("svd computed with u");
    let v_t = svd.v_t.expect("svd computed with v_t");
    let sigma = svd.singular_values;
    let v = v_t.transpose();

    let d = (u * v_t).determinant().signum();
    let min_idx = sigma.imin();
    let mut signs = Vector3::new(1.0, 1.0, 1.0);
    if d < 0.0 {
        signs[min_idx] = -1.0;
    }
    let r = u * Matrix3::from_diagonal(&signs) * v_t;

    let scale = sigma.max().max(1.0);
    let signed = sigma.component_mul(&signs);
    let mut degenerate = sigma[min_idx] < RANK_TOL;
    for i in 0..3 {
        for j in (i + 1)..3 {
            if (signed[i] + signed[j]).abs() < RANK_TOL * scale {
                degenerate = true;
            }
        }
    }

    Projection {
        rotation: RotMatrix(r),
        degenerate,
        singular_values: sigma,
        u,
        v,
        signs,
    }
}

impl Projection {
    /// Pulls a gradient with respect to the projected rotation back onto the
    /// raw matrix.
    ///
    /// With `R = U S Vᵀ` and the signed singular values `σ'`, the
    /// differential is `dR = U S Ω Vᵀ` where
    /// `Ω_ij = (M_ij − M_ji) / (σ'_i + σ'_j)` and `M = S Uᵀ dA V`. Collecting
    /// terms gives `∂L/∂A = U S K Vᵀ` with `K_ij = (H_ij − H_ji) / (σ'_i + σ'_j)`
    /// and `H = S Uᵀ G V`.
    pub fn vjp(&self, upstream: &Matrix3<f64>) -> Matrix3<f64> {
        let s = Matrix3::from_diagonal(&self.signs);
        let h = s * self.u.transpose() * upstream * self.v;
        let signed = self.singular_values.component_mul(&self.signs);
        let scale = self.singular_values.max().max(1.0);
        let mut k = Matrix3::zeros();
        for i in 0..3 {
            for j in 0..3 {
                if i == j {
                    continue;
                }
                let denom = signed[i] + signed[j];
                if denom.abs() > RANK_TOL * scale {
                    k[(i, j)] = (h[(i, j)] - h[(j, i)]) / denom;
                }
            }
        }
        self.u * s * k * self.v.transpose()
    }
}
