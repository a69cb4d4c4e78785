//! Sampling from the matrix Fisher distribution `p(R) ~ exp(tr(F^T R))`.
//!
//! The density is a Bingham distribution on unit quaternions, sampled by
//! rejection from an angular central Gaussian envelope (Kent, Ganeiber and
//! Mardia, 2013).

use nalgebra::{Matrix3, Matrix4, SymmetricEigen, Vector4};
use rand::{Rng, RngCore};
use rand_distr::StandardNormal;

/// Rotation matrix of the quaternion `(w, x, y, z)`, extended as a
/// homogeneous quadratic so that non-unit arguments polarize cleanly.
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

pub fn quaternion_to_rotation(q: &Vector4<f64>) -> Matrix3<f64> {
    quadratic_rotation(&q.normalize())
}

/// Precomputed rejection sampler for one parameter matrix `F`.
#[derive(Debug, Clone)]
pub struct MatrixFisherSampler {
    /// Bingham exponent: density on S^3 proportional to `exp(-q^T A q)`.
    a: Matrix4<f64>,
    /// Cholesky-like factor mapping standard normals to the ACG envelope.
    envelope: Matrix4<f64>,
    omega: Matrix4<f64>,
    log_bound: f64,
}

impl MatrixFisherSampler {
    pub fn new(f: &Matrix3<f64>) -> Self {
        // tr(F^T R(q)) = q^T B q
        let quad = |q: Vector4<f64>| (f.transpose() * quadratic_rotation(&q)).trace();
        let mut b = Matrix4::zeros();
        for i in 0..4 {
            b[(i, i)] = quad(Vector4::ith(i, 1.0));
        }
        for i in 0..4 {
            for j in (i + 1)..4 {
                let v = 0.5 * (quad(Vector4::ith(i, 1.0) + Vector4::ith(j, 1.0)) - b[(i, i)] - b[(j, j)]);
                b[(i, j)] = v;
                b[(j, i)] = v;
            }
        }
        let eig = SymmetricEigen::new(b);
        let top = eig.eigenvalues.max();
        let a = Matrix4::identity() * top - b;
        let lambdas: Vec<f64> = eig.eigenvalues.iter().map(|l| (top - l).max(0.0)).collect();
        let bb = solve_envelope_parameter(&lambdas);
        let omega = Matrix4::identity() + a * (2.0 / bb);
        // y ~ N(0, omega^-1): y = V diag(1/sqrt(eig(omega))) z
        let oe = SymmetricEigen::new(omega);
        let scale = Matrix4::from_diagonal(&oe.eigenvalues.map(|v| 1.0 / v.sqrt()));
        let envelope = oe.eigenvectors * scale;
        let q = 4.0;
        let log_bound = -0.5 * (q - bb) + 0.5 * q * (q / bb).ln();
        Self {
            a,
            envelope,
            omega,
            log_bound,
        }
    }

    pub fn sample_quaternion(&self, rng: &mut dyn RngCore) -> Vector4<f64> {
        loop {
            let z = Vector4::from_fn(|_, _| rng.sample::<f64, _>(StandardNormal));
            let y = self.envelope * z;
            let x = y.normalize();
            let log_target = -(x.transpose() * self.a * x)[0];
            let log_envelope = -2.0 * (x.transpose() * self.omega * x)[0].ln();
            let u: f64 = rng.random();
            if u.ln() < log_target - log_envelope - self.log_bound {
                return x;
            }
        }
    }

    pub fn sample(&self, rng: &mut dyn RngCore) -> Matrix3<f64> {
        quaternion_to_rotation(&self.sample_quaternion(rng))
    }
}

/// Root `b` of `sum_i 1 / (b + 2 lambda_i) = 1` on `(0, 4]`.
fn solve_envelope_parameter(lambdas: &[f64]) -> f64 {
    let g = |b: f64| lambdas.iter().map(|l| 1.0 / (b + 2.0 * l)).sum::<f64>() - 1.0;
    if lambdas.iter().all(|&l| l == 0.0) {
        return lambdas.len() as f64;
    }
    let (mut lo, mut hi) = (1e-12, lambdas.len() as f64);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if g(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}
