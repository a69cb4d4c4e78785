//! Moments and marginals of grid densities and sample ensembles.
//!
//! Both paths use the same estimators so that spectral and Monte Carlo
//! results compare like for like:
//! - mean attitude: closest rotation to the first moment of `R`;
//! - mean `b3`: normalized first moment of `R e3`;
//! - attitude dispersion: root second moment of the first two components
//!   of `log(mean_R^T R)`;
//! - angular velocity: weighted mean and standard deviation.

use nalgebra::{Matrix3, Vector3};

use crate::error::{Error, Result};
use crate::harmonic::{GridDensity, HarmonicWorkspace};
use crate::model::{grid_omega, grid_rotation};
use crate::so3;

/// Smallest singular value of the first moment below which the mean
/// attitude is reported as ill-conditioned.
pub const ILL_CONDITIONED_SINGULAR_VALUE: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MomentSummary {
    pub t: f64,
    pub mean_r: Matrix3<f64>,
    pub mean_b3: Vector3<f64>,
    pub att_dispersion: [f64; 2],
    pub mean_omega: [f64; 2],
    pub std_omega: [f64; 2],
    pub ill_conditioned: bool,
}

/// Sums needed for the mean quantities.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FirstMoments {
    pub weight: f64,
    pub r: Matrix3<f64>,
    pub omega: [f64; 2],
}

impl Default for FirstMoments {
    fn default() -> Self {
        Self {
            weight: 0.0,
            r: Matrix3::zeros(),
            omega: [0.0; 2],
        }
    }
}

impl FirstMoments {
    pub fn add(&mut self, w: f64, r: &Matrix3<f64>, omega: [f64; 2]) {
        self.weight += w;
        self.r += r * w;
        self.omega[0] += w * omega[0];
        self.omega[1] += w * omega[1];
    }

    pub fn merge(&mut self, other: &Self) {
        self.weight += other.weight;
        self.r += other.r;
        self.omega[0] += other.omega[0];
        self.omega[1] += other.omega[1];
    }

    /// Closest rotation to the normalized first moment and whether that
    /// moment is nearly singular.
    pub fn mean_rotation(&self) -> (Matrix3<f64>, bool) {
        let m = self.r / self.weight;
        let (r, sv) = so3::project_to_rotation(&m);
        (r, sv.min() < ILL_CONDITIONED_SINGULAR_VALUE)
    }

    pub fn mean_omega(&self) -> [f64; 2] {
        [self.omega[0] / self.weight, self.omega[1] / self.weight]
    }

    pub fn mean_b3(&self) -> Vector3<f64> {
        let v = self.r.column(2).into_owned();
        let n = v.norm();
        if n > 0.0 {
            v / n
        } else {
            v
        }
    }
}

/// Centered sums, accumulated once the means are known.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct SecondMoments {
    pub weight: f64,
    pub dispersion: [f64; 2],
    pub omega: [f64; 2],
}

impl SecondMoments {
    pub fn add(&mut self, w: f64, mean_r: &Matrix3<f64>, mean_omega: [f64; 2], r: &Matrix3<f64>, omega: [f64; 2]) {
        let xi = so3::log(&(mean_r.transpose() * r));
        self.weight += w;
        self.dispersion[0] += w * xi.x * xi.x;
        self.dispersion[1] += w * xi.y * xi.y;
        self.omega[0] += w * (omega[0] - mean_omega[0]).powi(2);
        self.omega[1] += w * (omega[1] - mean_omega[1]).powi(2);
    }

    pub fn merge(&mut self, other: &Self) {
        self.weight += other.weight;
        for i in 0..2 {
            self.dispersion[i] += other.dispersion[i];
            self.omega[i] += other.omega[i];
        }
    }
}

impl MomentSummary {
    pub fn from_moments(t: f64, first: &FirstMoments, second: &SecondMoments) -> Self {
        let (mean_r, ill_conditioned) = first.mean_rotation();
        // A negative second moment only arises from negative density lobes;
        // the square root is then NaN rather than a misleading zero.
        let root = |v: f64| (v / second.weight).sqrt();
        Self {
            t,
            mean_r,
            mean_b3: first.mean_b3(),
            att_dispersion: [root(second.dispersion[0]), root(second.dispersion[1])],
            mean_omega: first.mean_omega(),
            std_omega: [root(second.omega[0]), root(second.omega[1])],
            ill_conditioned,
        }
    }

    /// Moments of an unweighted sample ensemble.
    pub fn from_samples(t: f64, samples: &[(Matrix3<f64>, [f64; 2])]) -> Self {
        let mut first = FirstMoments::default();
        for (r, o) in samples {
            first.add(1.0, r, *o);
        }
        let (mean_r, _) = first.mean_rotation();
        let mean_omega = first.mean_omega();
        let mut second = SecondMoments::default();
        for (r, o) in samples {
            second.add(1.0, &mean_r, mean_omega, r, *o);
        }
        Self::from_moments(t, &first, &second)
    }
}

/// Moments of a grid density under the quadrature weights (all modes).
pub fn density_moments(p: &GridDensity, ws: &HarmonicWorkspace, t: f64) -> MomentSummary {
    let m = marginals(p, ws);
    let band = ws.band();
    let rotations: Vec<Matrix3<f64>> = (0..band.attitude_len()).map(|a| grid_rotation(ws, a)).collect();
    let omegas: Vec<[f64; 2]> = (0..band.torus_len()).map(|k| grid_omega(ws, k)).collect();
    let mut first = FirstMoments::default();
    for (a, r) in rotations.iter().enumerate() {
        let w = m.attitude_weights[a] * m.attitude[a];
        first.r += r * w;
    }
    let w_om = ws.torus_grid().lebesgue_weight;
    let mut total = 0.0;
    for (k, o) in omegas.iter().enumerate() {
        let w = w_om * m.omega[k];
        total += w;
        first.omega[0] += w * o[0];
        first.omega[1] += w * o[1];
    }
    first.weight = total;
    let (mean_r, _) = first.mean_rotation();
    let mean_omega = first.mean_omega();
    let mut second = SecondMoments {
        weight: total,
        ..SecondMoments::default()
    };
    for (a, r) in rotations.iter().enumerate() {
        let w = m.attitude_weights[a] * m.attitude[a];
        let xi = so3::log(&(mean_r.transpose() * r));
        second.dispersion[0] += w * xi.x * xi.x;
        second.dispersion[1] += w * xi.y * xi.y;
    }
    for (k, o) in omegas.iter().enumerate() {
        let w = w_om * m.omega[k];
        second.omega[0] += w * (o[0] - mean_omega[0]).powi(2);
        second.omega[1] += w * (o[1] - mean_omega[1]).powi(2);
    }
    MomentSummary::from_moments(t, &first, &second)
}

/// Marginal densities on the grid, each with its own quadrature weights.
#[derive(Debug, Clone, PartialEq)]
pub struct Marginals {
    /// Attitude marginal at flat attitude index `(nu1, nu2, nu3)`.
    pub attitude: Vec<f64>,
    pub attitude_weights: Vec<f64>,
    /// `b3` marginal on the sphere grid, stored `[nu1][nu2]` (alpha, beta).
    pub b3: Vec<f64>,
    pub b3_weights: Vec<f64>,
    pub alpha: Vec<f64>,
    pub beta: Vec<f64>,
    /// Angular-velocity marginal, stored `[mu1][mu2]`.
    pub omega: Vec<f64>,
    pub omega_weight: f64,
    pub omega_axis: Vec<f64>,
}

impl Marginals {
    pub fn attitude_total(&self) -> f64 {
        self.attitude.iter().zip(&self.attitude_weights).map(|(v, w)| v * w).sum()
    }

    pub fn b3_total(&self) -> f64 {
        self.b3.iter().zip(&self.b3_weights).map(|(v, w)| v * w).sum()
    }

    pub fn omega_total(&self) -> f64 {
        self.omega.iter().sum::<f64>() * self.omega_weight
    }
}

pub fn marginals(p: &GridDensity, ws: &HarmonicWorkspace) -> Marginals {
    let band = ws.band();
    let n = band.so3_points();
    let k_len = band.torus_len();
    let n_att = band.attitude_len();
    let grid = ws.so3_grid();
    let w_om = ws.torus_grid().lebesgue_weight;
    let mut attitude = vec![0.0; n_att];
    let mut omega = vec![0.0; k_len];
    let attitude_weights: Vec<f64> = (0..n_att).map(|a| grid.weights[(a / n) % n]).collect();
    for s in 0..p.n_modes() {
        for (a, chunk) in p.mode(s).chunks(k_len).enumerate() {
            attitude[a] += w_om * crate::harmonic::pairwise_sum(chunk);
            let w = attitude_weights[a];
            omega.iter_mut().zip(chunk).for_each(|(o, v)| *o += w * v);
        }
    }
    let mut b3 = vec![0.0; n * n];
    for (a, v) in attitude.iter().enumerate() {
        b3[a / n] += v / n as f64;
    }
    let b3_weights = (0..n * n).map(|i| n as f64 * grid.weights[i % n]).collect();
    Marginals {
        attitude,
        attitude_weights,
        b3,
        b3_weights,
        alpha: grid.alpha.clone(),
        beta: grid.beta.clone(),
        omega,
        omega_weight: w_om,
        omega_axis: ws.torus_grid().omega.clone(),
    }
}

/// Differences `a - b` at one time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MomentDifference {
    pub t: f64,
    /// Geodesic distance between the mean attitudes (rad).
    pub attitude_angle: f64,
    /// Angle between the mean `b3` directions (rad).
    pub b3_angle: f64,
    pub att_dispersion: [f64; 2],
    pub mean_omega: [f64; 2],
    pub std_omega: [f64; 2],
}

pub const TIMESTAMP_TOLERANCE: f64 = 1e-9;

pub fn compare(a: &[MomentSummary], b: &[MomentSummary]) -> Result<Vec<MomentDifference>> {
    if a.len() != b.len() {
        let index = a.len().min(b.len());
        let at = |s: &[MomentSummary]| s.get(index).map_or(f64::NAN, |m| m.t);
        return Err(Error::TimestampMismatch {
            index,
            a: at(a),
            b: at(b),
        });
    }
    a.iter()
        .zip(b)
        .enumerate()
        .map(|(index, (x, y))| {
            if (x.t - y.t).abs() > TIMESTAMP_TOLERANCE {
                return Err(Error::TimestampMismatch { index, a: x.t, b: y.t });
            }
            let cos_b3 = x.mean_b3.dot(&y.mean_b3).clamp(-1.0, 1.0);
            let sub = |p: [f64; 2], q: [f64; 2]| [p[0] - q[0], p[1] - q[1]];
            Ok(MomentDifference {
                t: x.t,
                attitude_angle: so3::geodesic_distance(&x.mean_r, &y.mean_r),
                b3_angle: x.mean_b3.cross(&y.mean_b3).norm().atan2(cos_b3),
                att_dispersion: sub(x.att_dispersion, y.att_dispersion),
                mean_omega: sub(x.mean_omega, y.mean_omega),
                std_omega: sub(x.std_omega, y.std_omega),
            })
        })
        .collect()
}

/// Largest absolute value over time of each difference.
pub fn max_differences(d: &[MomentDifference]) -> MomentDifference {
    let mut out = MomentDifference {
        t: d.last().map_or(0.0, |x| x.t),
        attitude_angle: 0.0,
        b3_angle: 0.0,
        att_dispersion: [0.0; 2],
        mean_omega: [0.0; 2],
        std_omega: [0.0; 2],
    };
    for x in d {
        out.attitude_angle = out.attitude_angle.max(x.attitude_angle);
        out.b3_angle = out.b3_angle.max(x.b3_angle);
        for i in 0..2 {
            out.att_dispersion[i] = out.att_dispersion[i].max(x.att_dispersion[i].abs());
            out.mean_omega[i] = out.mean_omega[i].max(x.mean_omega[i].abs());
            out.std_omega[i] = out.std_omega[i].max(x.std_omega[i].abs());
        }
    }
    out
}
