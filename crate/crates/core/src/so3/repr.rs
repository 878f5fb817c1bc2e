use std::fmt;
use std::str::FromStr;

use nalgebra::{Matrix3, Matrix4, Vector3, Vector4};
use serde::{Deserialize, Serialize};

use super::distance::geodesic_gradient;
use super::matrix::{svd_orthogonalize, Projection, RawMatrix};
use super::quaternion::unit_quat_matrix;
use super::{AxisAngle, JointRotations, Quaternion, RotMatrix};
use crate::error::{Error, Result};

/// Parameterization of a rotation as a flat vector of reals.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Representation {
    /// Row-major 3×3 matrix; raw outputs are projected with SVD.
    #[serde(rename = "matrix")]
    Matrix,
    /// `[w, x, y, z]`; raw outputs are normalized.
    #[serde(rename = "quat", alias = "quaternion")]
    Quaternion,
    /// `[vx, vy, vz]`, angle in radians.
    #[serde(rename = "aa", alias = "axis_angle")]
    AxisAngle,
}

impl Representation {
    pub const ALL: [Representation; 3] = [
        Representation::AxisAngle,
        Representation::Quaternion,
        Representation::Matrix,
    ];

    pub fn dim(self) -> usize {
        match self {
            Representation::Matrix => 9,
            Representation::Quaternion => 4,
            Representation::AxisAngle => 3,
        }
    }

    pub fn tag(self) -> &'static str {
        match self {
            Representation::Matrix => "matrix",
            Representation::Quaternion => "quat",
            Representation::AxisAngle => "aa",
        }
    }

    /// Short code used in result tables.
    pub fn code(self) -> &'static str {
        match self {
            Representation::Matrix => "RM",
            Representation::Quaternion => "Q",
            Representation::AxisAngle => "AA",
        }
    }

    /// Canonical parameters of a rotation: quaternions with `w ≥ 0`,
    /// axis-angle with angle in `[0, π]`.
    pub fn encode(self, r: &RotMatrix) -> Vec<f64> {
        match self {
            Representation::Matrix => r.to_row_major().to_vec(),
            Representation::Quaternion => Quaternion::from_rotation(r).to_array().to_vec(),
            Representation::AxisAngle => AxisAngle::from_rotation(r).0.as_slice().to_vec(),
        }
    }

    /// Rotation described by (possibly unconstrained) parameters.
    pub fn decode(self, raw: &[f64]) -> RotMatrix {
        self.decode_with_state(raw).rotation
    }

    /// Decodes and keeps what is needed to differentiate the decoding.
    pub fn decode_with_state(self, raw: &[f64]) -> DecodedRotation {
        assert_eq!(raw.len(), self.dim(), "parameter count for {self}");
        match self {
            Representation::Matrix => {
                let projection = svd_orthogonalize(&RawMatrix(Matrix3::from_row_slice(raw)));
                DecodedRotation {
                    rotation: projection.rotation,
                    state: DecodeState::Matrix(Box::new(projection)),
                }
            }
            Representation::Quaternion => {
                let p = Vector4::new(raw[0], raw[1], raw[2], raw[3]);
                let norm = p.norm();
                let unit = if norm > 1e-12 {
                    Quaternion::new(p[0] / norm, p[1] / norm, p[2] / norm, p[3] / norm)
                } else {
                    Quaternion::identity()
                };
                DecodedRotation {
                    rotation: RotMatrix::from_matrix_unchecked(unit_quat_matrix(&unit)),
                    state: DecodeState::Quaternion { unit, norm },
                }
            }
            Representation::AxisAngle => {
                let v = Vector3::new(raw[0], raw[1], raw[2]);
                DecodedRotation {
                    rotation: AxisAngle(v).to_rotation(),
                    state: DecodeState::AxisAngle(v),
                }
            }
        }
    }
}

impl fmt::Display for Representation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for Representation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "matrix" | "rm" | "RM" => Ok(Representation::Matrix),
            "quat" | "quaternion" | "q" | "Q" => Ok(Representation::Quaternion),
            "aa" | "axis_angle" | "axis-angle" | "AA" => Ok(Representation::AxisAngle),
            other => Err(Error::UnknownRepresentation(other.to_string())),
        }
    }
}

/// Loss applied to rotation outputs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossKind {
    Mse,
    Geodesic,
}

impl LossKind {
    pub fn label(self) -> &'static str {
        match self {
            LossKind::Mse => "MSE",
            LossKind::Geodesic => "Geodesic",
        }
    }
}

impl FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "mse" => Ok(LossKind::Mse),
            "geodesic" | "geo" => Ok(LossKind::Geodesic),
            other => Err(Error::InvalidConfig(format!("unknown loss `{other}`"))),
        }
    }
}

impl fmt::Display for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LossKind::Mse => "mse",
            LossKind::Geodesic => "geodesic",
        })
    }
}

/// Per-joint rotations stored as flat parameters of one representation.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodedRotations {
    pub representation: Representation,
    pub values: Vec<f64>,
}

impl EncodedRotations {
    pub fn new(representation: Representation, values: Vec<f64>) -> Result<Self> {
        if values.len() % representation.dim() != 0 {
            return Err(Error::mismatch(
                "encoded rotation values (multiple of dim)",
                representation.dim() * (values.len() / representation.dim() + 1),
                values.len(),
            ));
        }
        Ok(EncodedRotations {
            representation,
            values,
        })
    }

    pub fn encode(representation: Representation, rotations: &JointRotations) -> Self {
        let values = rotations
            .iter()
            .flat_map(|r| representation.encode(r))
            .collect();
        EncodedRotations {
            representation,
            values,
        }
    }

    pub fn len(&self) -> usize {
        self.values.len() / self.representation.dim()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn joint(&self, k: usize) -> &[f64] {
        let d = self.representation.dim();
        &self.values[k * d..(k + 1) * d]
    }

    pub fn decode(&self) -> JointRotations {
        let d = self.representation.dim();
        JointRotations::new(
            self.values
                .chunks_exact(d)
                .map(|c| self.representation.decode(c))
                .collect(),
        )
    }
}

/// Mean squared error in representation space: mean over the entries of a
/// joint, then mean over joints. Values are compared as given, so `q` and
/// `−q` are penalized even though they are the same rotation.
pub fn mse_loss(pred: &EncodedRotations, gt: &EncodedRotations) -> Result<f64> {
    if pred.representation != gt.representation {
        return Err(Error::RepresentationMismatch(
            pred.representation.to_string(),
            gt.representation.to_string(),
        ));
    }
    if pred.values.len() != gt.values.len() {
        return Err(Error::mismatch("encoded rotations", gt.len(), pred.len()));
    }
    if gt.is_empty() {
        return Err(Error::EmptySubset);
    }
    let sum: f64 = pred
        .values
        .iter()
        .zip(&gt.values)
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    // Equal element counts per joint make the two-stage mean a flat mean.
    Ok(sum / pred.values.len() as f64)
}

#[derive(Debug, Clone)]
enum DecodeState {
    Matrix(Box<Projection>),
    Quaternion { unit: Quaternion, norm: f64 },
    AxisAngle(Vector3<f64>),
}

/// A decoded rotation together with the intermediate values needed to pull
/// gradients back onto its raw parameters.
#[derive(Debug, Clone)]
pub struct DecodedRotation {
    pub rotation: RotMatrix,
    state: DecodeState,
}

impl DecodedRotation {
    pub fn representation(&self) -> Representation {
        match self.state {
            DecodeState::Matrix(_) => Representation::Matrix,
            DecodeState::Quaternion { .. } => Representation::Quaternion,
            DecodeState::AxisAngle(_) => Representation::AxisAngle,
        }
    }

    /// True when the decoding is locally non-unique (degenerate SVD input or
    /// a zero quaternion).
    pub fn degenerate(&self) -> bool {
        match &self.state {
            DecodeState::Matrix(p) => p.degenerate,
            DecodeState::Quaternion { norm, .. } => *norm <= 1e-12,
            DecodeState::AxisAngle(_) => false,
        }
    }

    /// Parameters that the MSE loss compares against the target encoding:
    /// the projected matrix, the normalized quaternion, or the raw vector.
    pub fn loss_params(&self) -> Vec<f64> {
        match &self.state {
            DecodeState::Matrix(p) => p.rotation.to_row_major().to_vec(),
            DecodeState::Quaternion { unit, .. } => unit.to_array().to_vec(),
            DecodeState::AxisAngle(v) => v.as_slice().to_vec(),
        }
    }

    /// Gradient on the raw parameters given `∂L/∂R` for the decoded matrix.
    pub fn backprop_rotation(&self, upstream: &Matrix3<f64>) -> Vec<f64> {
        match &self.state {
            DecodeState::Matrix(p) => row_major(&p.vjp(upstream)),
            DecodeState::Quaternion { unit, norm } => {
                let g_unit = quat_matrix_vjp(unit, upstream);
                normalize_vjp(unit, *norm, &g_unit).as_slice().to_vec()
            }
            DecodeState::AxisAngle(v) => {
                let g_quat = quat_matrix_vjp(&AxisAngle(*v).to_quaternion(), upstream);
                (axis_angle_quat_jacobian(v).transpose() * g_quat)
                    .as_slice()
                    .to_vec()
            }
        }
    }

    /// Gradient on the raw parameters given `∂L/∂(loss_params)`.
    pub fn backprop_params(&self, upstream: &[f64]) -> Vec<f64> {
        match &self.state {
            DecodeState::Matrix(p) => row_major(&p.vjp(&Matrix3::from_row_slice(upstream))),
            DecodeState::Quaternion { unit, norm } => {
                let g = Vector4::from_row_slice(upstream);
                normalize_vjp(unit, *norm, &g).as_slice().to_vec()
            }
            DecodeState::AxisAngle(_) => upstream.to_vec(),
        }
    }
}

fn row_major(m: &Matrix3<f64>) -> Vec<f64> {
    m.transpose().as_slice().to_vec()
}

/// Partial derivatives of the unit-quaternion matrix formula with respect to
/// `w, x, y, z`.
pub fn quat_matrix_partials(q: &Quaternion) -> [Matrix3<f64>; 4] {
    let Quaternion { w, x, y, z } = *q;
    let t = 2.0;
    [
        Matrix3::new(0.0, -t * z, t * y, t * z, 0.0, -t * x, -t * y, t * x, 0.0),
        Matrix3::new(0.0, t * y, t * z, t * y, -2.0 * t * x, -t * w, t * z, t * w, -2.0 * t * x),
        Matrix3::new(-2.0 * t * y, t * x, t * w, t * x, 0.0, t * z, -t * w, t * z, -2.0 * t * y),
        Matrix3::new(-2.0 * t * z, -t * w, t * x, t * w, -2.0 * t * z, t * y, t * x, t * y, 0.0),
    ]
}

fn quat_matrix_vjp(q: &Quaternion, upstream: &Matrix3<f64>) -> Vector4<f64> {
    let partials = quat_matrix_partials(q);
    Vector4::from_fn(|i, _| partials[i].dot(upstream))
}

/// `∂(p/‖p‖)/∂p = (I − q̂q̂ᵀ)/‖p‖`, applied transposed (it is symmetric).
fn normalize_vjp(unit: &Quaternion, norm: f64, g: &Vector4<f64>) -> Vector4<f64> {
    if norm <= 1e-12 {
        return Vector4::zeros();
    }
    let q = Vector4::from(unit.to_array());
    (Matrix4::identity() - q * q.transpose()) * g / norm
}

/// Jacobian (4×3) of the axis-angle → quaternion map.
///
/// With `f(α) = sin(α/2)/α`: `w = cos(α/2)`, `(x,y,z) = f(α)·v`, so
/// `∂w/∂v = −½ f(α) vᵀ` and `∂xyz/∂v = f I + (f'(α)/α) v vᵀ`. Both
/// coefficients use a Taylor expansion for small angles.
pub fn axis_angle_quat_jacobian(v: &Vector3<f64>) -> nalgebra::Matrix4x3<f64> {
    let a = v.norm();
    let (f, g) = if a < 1e-2 {
        let a2 = a * a;
        (
            0.5 - a2 / 48.0 + a2 * a2 / 3840.0,
            -1.0 / 24.0 + a2 / 960.0 - a2 * a2 / 107_520.0,
        )
    } else {
        let (s, c) = (0.5 * a).sin_cos();
        (s / a, (0.5 * a * c - s) / (a * a * a))
    };
    let mut j = nalgebra::Matrix4x3::zeros();
    for col in 0..3 {
        j[(0, col)] = -0.5 * f * v[col];
        for row in 0..3 {
            let delta = if row == col { f } else { 0.0 };
            j[(row + 1, col)] = delta + g * v[row] * v[col];
        }
    }
    j
}

/// Loss value with its gradient on the raw prediction parameters.
#[derive(Debug, Clone)]
pub struct LossGradient {
    pub value: f64,
    pub gradient: Vec<f64>,
}

/// Loss on one joint given a decoded prediction, returning the gradient on
/// its raw parameters.
pub fn joint_loss(
    kind: LossKind,
    decoded: &DecodedRotation,
    gt: &RotMatrix,
    gt_params: &[f64],
) -> (f64, Vec<f64>) {
    match kind {
        LossKind::Geodesic => {
            let (phi, g) = geodesic_gradient(gt, &decoded.rotation);
            (phi, decoded.backprop_rotation(&g))
        }
        LossKind::Mse => {
            let params = decoded.loss_params();
            let n = params.len() as f64;
            let mut value = 0.0;
            let upstream: Vec<f64> = params
                .iter()
                .zip(gt_params)
                .map(|(p, t)| {
                    value += (p - t) * (p - t);
                    2.0 * (p - t) / n
                })
                .collect();
            (value / n, decoded.backprop_params(&upstream))
        }
    }
}

/// Mean loss over joints between raw predictions (`K·dim` values) and ground
/// truth rotations, with the analytic gradient on the raw predictions.
pub fn loss_gradients(
    kind: LossKind,
    representation: Representation,
    pred_raw: &[f64],
    gt: &JointRotations,
) -> Result<LossGradient> {
    let d = representation.dim();
    if pred_raw.len() != gt.len() * d {
        return Err(Error::mismatch("raw prediction values", gt.len() * d, pred_raw.len()));
    }
    if gt.is_empty() {
        return Err(Error::EmptySubset);
    }
    let k = gt.len() as f64;
    let mut value = 0.0;
    let mut gradient = Vec::with_capacity(pred_raw.len());
    for (raw, gt_rot) in pred_raw.chunks_exact(d).zip(gt.iter()) {
        let decoded = representation.decode_with_state(raw);
        let gt_params = representation.encode(gt_rot);
        let (v, g) = joint_loss(kind, &decoded, gt_rot, &gt_params);
        value += v;
        gradient.extend(g.into_iter().map(|x| x / k));
    }
    Ok(LossGradient {
        value: value / k,
        gradient,
    })
}

/// Loss value only; the counterpart of [`loss_gradients`].
pub fn loss_value(
    kind: LossKind,
    representation: Representation,
    pred_raw: &[f64],
    gt: &JointRotations,
) -> Result<f64> {
    let d = representation.dim();
    if pred_raw.len() != gt.len() * d {
        return Err(Error::mismatch("raw prediction values", gt.len() * d, pred_raw.len()));
    }
    if gt.is_empty() {
        return Err(Error::EmptySubset);
    }
    let mut sum = 0.0;
    for (raw, gt_rot) in pred_raw.chunks_exact(d).zip(gt.iter()) {
        let decoded = representation.decode_with_state(raw);
        sum += match kind {
            LossKind::Geodesic => super::geodesic_distance(gt_rot, &decoded.rotation),
            LossKind::Mse => {
                let p = decoded.loss_params();
                let t = representation.encode(gt_rot);
                p.iter().zip(&t).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / p.len() as f64
            }
        };
    }
    Ok(sum / gt.len() as f64)
}
