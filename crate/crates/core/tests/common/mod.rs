//! Reference implementations used as oracles by the integration tests.
//! They deliberately avoid the library's own conversion and distance code.
#![allow(dead_code)]

use nalgebra::{Matrix3, Matrix4, SymmetricEigen, UnitQuaternion, Vector3, Vector4};
use rand::Rng;
use rand_distr::StandardNormal;
use rotokin::so3::RotMatrix;

/// Uniform rotation via nalgebra's quaternion type.
pub fn uniform_rotation<R: Rng>(rng: &mut R) -> RotMatrix {
    let q = loop {
        let v = Vector4::from_fn(|_, _| rng.sample::<f64, _>(StandardNormal));
        if v.norm() > 1e-3 {
            break v;
        }
    };
    let uq = UnitQuaternion::from_quaternion(nalgebra::Quaternion::new(q[0], q[1], q[2], q[3]));
    RotMatrix::from_matrix_unchecked(uq.to_rotation_matrix().into_inner())
}

pub fn gaussian_matrix<R: Rng>(rng: &mut R) -> Matrix3<f64> {
    Matrix3::from_fn(|_, _| rng.sample(StandardNormal))
}

/// Rotation about a unit axis by Rodrigues' formula.
pub fn rodrigues(axis: &Vector3<f64>, angle: f64) -> Matrix3<f64> {
    let a = axis.normalize();
    let k = Matrix3::new(0.0, -a.z, a.y, a.z, 0.0, -a.x, -a.y, a.x, 0.0);
    Matrix3::identity() + k * angle.sin() + k * k * (1.0 - angle.cos())
}

/// Angle between two rotations from the skew and symmetric parts of
/// `AᵀB`, accurate over the whole range.
pub fn angle_between(a: &Matrix3<f64>, b: &Matrix3<f64>) -> f64 {
    let rel = a.transpose() * b;
    let s = Vector3::new(
        rel[(2, 1)] - rel[(1, 2)],
        rel[(0, 2)] - rel[(2, 0)],
        rel[(1, 0)] - rel[(0, 1)],
    )
    .norm()
        / 2.0;
    let c = (rel.trace() - 1.0) / 2.0;
    s.atan2(c)
}

/// Rotation matrix of an unnormalized quaternion scaled by its squared norm
/// (homogeneous quadratic form).
fn quadratic_rotation(q: &Vector4<f64>) -> Matrix3<f64> {
    let (w, x, y, z) = (q[0], q[1], q[2], q[3]);
    Matrix3::new(
        w * w + x * x - y * y - z * z,
        2.0 * (x * y - w * z),
        2.0 * (x * z + w * y),
        2.0 * (x * y + w * z),
        w * w - x * x + y * y - z * z,
        2.0 * (y * z - w * x),
        2.0 * (x * z - w * y),
        2.0 * (y * z + w * x),
        w * w - x * x - y * y + z * z,
    )
}

/// Nearest rotation to `a` from the Davenport/Horn eigenproblem: the unit
/// quaternion maximizing `tr(R(q)ᵀ a) = qᵀ K q` is the top eigenvector of `K`.
/// Also returns the gap between the two largest eigenvalues.
pub fn nearest_rotation_by_eigen(a: &Matrix3<f64>) -> (Matrix3<f64>, f64) {
    let f = |q: &Vector4<f64>| quadratic_rotation(q).component_mul(a).sum();
    let e = |i: usize| Vector4::from_fn(|r, _| if r == i { 1.0 } else { 0.0 });
    let mut k = Matrix4::zeros();
    for i in 0..4 {
        k[(i, i)] = f(&e(i));
        for j in (i + 1)..4 {
            let v = (f(&(e(i) + e(j))) - f(&e(i)) - f(&e(j))) / 2.0;
            k[(i, j)] = v;
            k[(j, i)] = v;
        }
    }
    let eig = SymmetricEigen::new(k);
    let mut order: Vec<usize> = (0..4).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]));
    let q = eig.eigenvectors.column(order[0]).into_owned();
    let gap = eig.eigenvalues[order[0]] - eig.eigenvalues[order[1]];
    (quadratic_rotation(&q.normalize()), gap)
}

/// Relative error `‖a − f‖ / max(‖a‖, ‖f‖)`, zero when both vanish.
pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: Vec<f64> = analytic.iter().zip(numeric).map(|(a, b)| a - b).collect();
    let scale = norm(analytic).max(norm(numeric));
    if scale == 0.0 {
        0.0
    } else {
        norm(&diff) / scale
    }
}

/// Central differences of `f` at `x` with step `h`.
pub fn central_difference<F: FnMut(&[f64]) -> f64>(mut f: F, x: &[f64], h: f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            probe[i] = x[i] + h;
            let up = f(&probe);
            probe[i] = x[i] - h;
            let down = f(&probe);
            probe[i] = x[i];
            (up - down) / (2.0 * h)
        })
        .collect()
}
