//! Rotation-group helpers: hat/vee maps, exponential and logarithm,
//! 3-2-3 Euler angles, geodesic distance and projection onto SO(3).

use nalgebra::{Matrix3, Vector3};
use std::f64::consts::PI;

/// Skew-symmetric matrix with `hat(v) * x == v.cross(&x)`.
pub fn hat(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

pub fn vee(m: &Matrix3<f64>) -> Vector3<f64> {
    Vector3::new(m[(2, 1)], m[(0, 2)], m[(1, 0)])
}

/// Rodrigues formula for `exp(hat(v))`.
pub fn exp(v: &Vector3<f64>) -> Matrix3<f64> {
    let theta = v.norm();
    let k = hat(v);
    if theta < 1e-8 {
        return Matrix3::identity() + k + 0.5 * k * k;
    }
    let a = theta.sin() / theta;
    let b = (1.0 - theta.cos()) / (theta * theta);
    Matrix3::identity() + a * k + b * k * k
}

/// Rotation vector of `r`, with angle in `[0, pi]`.
pub fn log(r: &Matrix3<f64>) -> Vector3<f64> {
    let skew = vee(&((r - r.transpose()) * 0.5));
    let sin_theta = skew.norm();
    let cos_theta = (r.trace() - 1.0) * 0.5;
    let theta = sin_theta.atan2(cos_theta);
    if theta < 1e-6 {
        return skew;
    }
    if cos_theta > -0.5 {
        return skew * (theta / sin_theta);
    }
    // near pi the skew part is small; the symmetric part is
    // cos(theta) I + (1 - cos(theta)) a a^T
    let sym = (r + r.transpose()) * 0.5 - Matrix3::identity() * cos_theta;
    let outer = sym / (1.0 - cos_theta);
    let diag = Vector3::new(outer[(0, 0)], outer[(1, 1)], outer[(2, 2)]);
    let k = diag.imax();
    let mut axis = outer.column(k).into_owned() / diag[k].max(1e-300).sqrt();
    if skew.dot(&axis) < 0.0 {
        axis = -axis;
    }
    axis.normalize() * theta
}

/// Geodesic (rotation-angle) distance between two rotations.
pub fn geodesic_distance(a: &Matrix3<f64>, b: &Matrix3<f64>) -> f64 {
    let c = (((a.transpose() * b).trace() - 1.0) * 0.5).clamp(-1.0, 1.0);
    c.acos()
}

pub fn rot_x(t: f64) -> Matrix3<f64> {
    let (s, c) = t.sin_cos();
    Matrix3::new(1.0, 0.0, 0.0, 0.0, c, -s, 0.0, s, c)
}

pub fn rot_y(t: f64) -> Matrix3<f64> {
    let (s, c) = t.sin_cos();
    Matrix3::new(c, 0.0, s, 0.0, 1.0, 0.0, -s, 0.0, c)
}

pub fn rot_z(t: f64) -> Matrix3<f64> {
    let (s, c) = t.sin_cos();
    Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0)
}

/// `R(alpha, beta, gamma) = exp(alpha e3^) exp(beta e2^) exp(gamma e3^)`.
pub fn euler_zyz(alpha: f64, beta: f64, gamma: f64) -> Matrix3<f64> {
    rot_z(alpha) * rot_y(beta) * rot_z(gamma)
}

/// Inverse of [`euler_zyz`]; alpha and gamma in `[0, 2pi)`, beta in `[0, pi]`.
/// At the poles (beta = 0 or pi) gamma is set to zero.
pub fn zyz_angles(r: &Matrix3<f64>) -> (f64, f64, f64) {
    let beta = r[(2, 2)].clamp(-1.0, 1.0).acos();
    let wrap = |x: f64| {
        let y = x.rem_euclid(2.0 * PI);
        if y >= 2.0 * PI {
            0.0
        } else {
            y
        }
    };
    if beta.sin() < 1e-12 {
        // only alpha +/- gamma is determined
        let alpha = if r[(2, 2)] > 0.0 {
            r[(1, 0)].atan2(r[(0, 0)])
        } else {
            (-r[(1, 0)]).atan2(-r[(0, 0)])
        };
        return (wrap(alpha), beta, 0.0);
    }
    let alpha = r[(1, 2)].atan2(r[(0, 2)]);
    let gamma = r[(2, 1)].atan2(-r[(2, 0)]);
    (wrap(alpha), beta, wrap(gamma))
}

/// Closest rotation to `m` in the Frobenius sense, with its singular values.
pub fn project_to_rotation(m: &Matrix3<f64>) -> (Matrix3<f64>, Vector3<f64>) {
    let svd = m.svd(true, true);
    let u = svd.u.expect("svd u");
    let v_t = svd.v_t.expect("svd v_t");
    let det = (u * v_t).determinant();
    let correction = Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, det.signum()));
    (u * correction * v_t, svd.singular_values)
}

/// Orthogonality defect `max |R^T R - I|`.
pub fn orthogonality_defect(r: &Matrix3<f64>) -> f64 {
    (r.transpose() * r - Matrix3::identity()).abs().max()
}
