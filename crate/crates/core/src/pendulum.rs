//! Axially symmetric 3D pendulum hitting a vertical wall.
//!
//! The body frame has `b3` along the symmetry axis; the pivot is at the
//! origin and the wall is the plane `x = d_wall`. Because the inertia is
//! symmetric about `b3` and gravity acts through that axis, the spin about
//! `b3` is constant and the reduced state is `(R, Omega_1, Omega_2)`.

use nalgebra::{Matrix2, Matrix3, Vector2, Vector3};
use rand::{Rng, RngCore};
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::fisher::MatrixFisherSampler;
use crate::harmonic::{GridDensity, HarmonicWorkspace};
use crate::model::{grid_omega, grid_rotation, GshsModel, HybridState};
use crate::so3;

/// Physical and numerical parameters. Defaults reproduce the reference
/// simulation setup.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PendulumParams {
    /// Distance from the pivot to the bottom face along `b3` (m).
    pub h: f64,
    /// Radius of the bottom face (m).
    pub r: f64,
    /// Distance from the pivot to the mass center along `b3` (m).
    pub rho_z: f64,
    /// Wall position on the inertial `e1` axis (m).
    pub d_wall: f64,
    pub m_mass: f64,
    /// Transverse moment of inertia about the pivot (kg m^2).
    #[serde(rename = "J1")]
    pub j1: f64,
    pub g_acc: f64,
    /// Diagonal of the reduced damping matrix (1/s).
    #[serde(rename = "B")]
    pub b: [f64; 2],
    /// Reduced noise gain (2 x 3).
    #[serde(rename = "Hc")]
    pub hc: [[f64; 3]; 2],
    /// Half-width of the rate ramp around the contact angle (rad).
    pub theta_t: f64,
    pub lambda_max: f64,
    /// Coefficient of restitution.
    pub epsilon: f64,
    /// Post-impact velocity noise gain (2 x 2, rad/s).
    #[serde(rename = "Hd")]
    pub hd: [[f64; 2]; 2],
    /// Half-width of the angular-velocity torus (rad/s).
    #[serde(rename = "L")]
    pub half_width: f64,
    /// Matrix Fisher parameter of the initial attitude.
    #[serde(rename = "fisher_F")]
    pub fisher_f: [[f64; 3]; 3],
    /// Standard deviation of the initial angular velocity (rad/s).
    pub omega_std: f64,
}

impl Default for PendulumParams {
    fn default() -> Self {
        let f = so3::rot_y(-2.0 * PI / 3.0) * 15.0;
        Self {
            h: 0.2,
            r: 0.025,
            rho_z: 0.1,
            d_wall: 0.12,
            m_mass: 1.0642,
            j1: 0.0144,
            g_acc: 9.8,
            b: [0.2, 0.2],
            hc: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]],
            theta_t: 5f64.to_radians(),
            lambda_max: 100.0,
            epsilon: 0.8,
            hd: [[0.05, 0.0], [0.0, 0.05]],
            half_width: 14.5,
            fisher_f: [
                [f[(0, 0)], f[(0, 1)], f[(0, 2)]],
                [f[(1, 0)], f[(1, 1)], f[(1, 2)]],
                [f[(2, 0)], f[(2, 1)], f[(2, 2)]],
            ],
            omega_std: 2.0,
        }
    }
}

impl PendulumParams {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("h", self.h),
            ("r", self.r),
            ("rho_z", self.rho_z),
            ("d_wall", self.d_wall),
            ("m_mass", self.m_mass),
            ("J1", self.j1),
            ("g_acc", self.g_acc),
            ("theta_t", self.theta_t),
            ("L", self.half_width),
            ("omega_std", self.omega_std),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidParameter(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.lambda_max >= 0.0 && self.lambda_max.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "lambda_max must be non-negative, got {}",
                self.lambda_max
            )));
        }
        if self.b.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::InvalidParameter("B must be non-negative".into()));
        }
        if self.d_wall >= self.contact_radius() {
            return Err(Error::InvalidParameter(format!(
                "wall at {} m is out of reach (contact radius {} m)",
                self.d_wall,
                self.contact_radius()
            )));
        }
        if !(self.epsilon > 0.0 && self.epsilon <= 1.0) {
            return Err(Error::InvalidParameter(format!(
                "epsilon must lie in (0, 1], got {}",
                self.epsilon
            )));
        }
        let sigma = self.reset_covariance();
        if !(sigma.determinant() > 0.0) {
            return Err(Error::InvalidParameter("Hd Hd^T must be positive definite".into()));
        }
        let finite = self.hc.iter().flatten().chain(self.fisher_f.iter().flatten());
        if finite.into_iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter("Hc and fisher_F must be finite".into()));
        }
        Ok(())
    }

    /// Distance from the pivot to the rim of the bottom face.
    pub fn contact_radius(&self) -> f64 {
        self.h.hypot(self.r)
    }

    /// Gravity gain `m g rho_z / J1`.
    pub fn gravity_gain(&self) -> f64 {
        self.m_mass * self.g_acc * self.rho_z / self.j1
    }

    pub fn reset_covariance(&self) -> Matrix2<f64> {
        let h = Matrix2::new(self.hd[0][0], self.hd[0][1], self.hd[1][0], self.hd[1][1]);
        h * h.transpose()
    }

    pub fn fisher_matrix(&self) -> Matrix3<f64> {
        Matrix3::from_fn(|i, j| self.fisher_f[i][j])
    }
}

/// Inclination of the symmetry axis towards the wall: `asin(b3 . e1)`.
pub fn theta(r: &Matrix3<f64>) -> f64 {
    r[(0, 2)].clamp(-1.0, 1.0).asin()
}

#[derive(Debug, Clone)]
pub struct Pendulum {
    params: PendulumParams,
    collisions: bool,
    theta0: f64,
    gravity: f64,
    kernel_precision: Matrix2<f64>,
    kernel_log_norm: f64,
    fisher: Matrix3<f64>,
    fisher_sampler: MatrixFisherSampler,
}

impl Pendulum {
    pub fn new(params: PendulumParams, collisions: bool) -> Result<Self> {
        params.validate()?;
        let rho = params.contact_radius();
        let theta0 = (params.d_wall / rho).asin() - (params.r / rho).asin();
        let sigma = params.reset_covariance();
        let kernel_precision = sigma
            .try_inverse()
            .ok_or_else(|| Error::InvalidParameter("Hd Hd^T is singular".into()))?;
        let kernel_log_norm = -(2.0 * PI * sigma.determinant().sqrt()).ln();
        let fisher = params.fisher_matrix();
        Ok(Self {
            gravity: params.gravity_gain(),
            fisher_sampler: MatrixFisherSampler::new(&fisher),
            params,
            collisions,
            theta0,
            kernel_precision,
            kernel_log_norm,
            fisher,
        })
    }

    pub fn params(&self) -> &PendulumParams {
        &self.params
    }

    pub fn collisions(&self) -> bool {
        self.collisions
    }

    /// Inclination at which the rim first touches the wall.
    pub fn theta0(&self) -> f64 {
        self.theta0
    }

    /// Pivot-to-contact vector in inertial coordinates: the rim point with
    /// the largest `e1` coordinate.
    pub fn varrho(&self, r: &Matrix3<f64>) -> Vector3<f64> {
        let th = theta(r);
        let p = &self.params;
        let b3 = r.column(2).into_owned();
        b3 * (p.h - p.r * th.tan()) + Vector3::x() * (p.r / th.cos())
    }

    /// Unit tangent `(varrho x e1) / |varrho x e1|`, or `None` at a
    /// degenerate contact.
    pub fn contact_tangent(&self, r: &Matrix3<f64>) -> Option<Vector3<f64>> {
        let c = self.varrho(r).cross(&Vector3::x());
        let n = c.norm();
        (n > 1e-12 && n.is_finite()).then(|| c / n)
    }

    /// Rate as a function of inclination for a state moving towards the wall.
    pub fn rate_profile(&self, th: f64) -> f64 {
        let p = &self.params;
        let dev = th - self.theta0;
        if dev > p.theta_t {
            p.lambda_max
        } else if dev >= -p.theta_t {
            0.5 * p.lambda_max * (1.0 + (PI * dev / (2.0 * p.theta_t)).sin())
        } else {
            0.0
        }
    }

    /// Whether the contact point moves towards the wall.
    pub fn approaching(&self, r: &Matrix3<f64>, omega: [f64; 2]) -> bool {
        let w = r * Vector3::new(omega[0], omega[1], 0.0);
        w.cross(&self.varrho(r)).x > 0.0
    }

    /// Mean post-impact velocity.
    pub fn reset_mean(&self, r: &Matrix3<f64>, omega: [f64; 2]) -> [f64; 2] {
        let Some(t) = self.contact_tangent(r) else {
            log::debug!("degenerate contact geometry; velocity left unchanged");
            return omega;
        };
        let n = r.transpose() * t;
        let om = Vector3::new(omega[0], omega[1], 0.0);
        let plus = om - n * ((1.0 + self.params.epsilon) * om.dot(&n));
        debug_assert!(plus.z.abs() < 1e-9, "reset changed the spin component");
        [plus.x, plus.y]
    }

    fn gaussian_log(&self, mean: [f64; 2], x: [f64; 2]) -> f64 {
        let d = Vector2::new(x[0] - mean[0], x[1] - mean[1]);
        -0.5 * (d.transpose() * self.kernel_precision * d)[0] + self.kernel_log_norm
    }

    fn hd_sample(&self, rng: &mut dyn RngCore) -> [f64; 2] {
        let a: f64 = rng.sample(StandardNormal);
        let b: f64 = rng.sample(StandardNormal);
        let h = &self.params.hd;
        [h[0][0] * a + h[0][1] * b, h[1][0] * a + h[1][1] * b]
    }
}

impl GshsModel for Pendulum {
    fn drift(&self, _t: f64, _mode: usize, r: &Matrix3<f64>, omega: [f64; 2]) -> [f64; 5] {
        let b = self.params.b;
        [
            omega[0],
            omega[1],
            0.0,
            self.gravity * r[(2, 1)] - b[0] * omega[0],
            -self.gravity * r[(2, 0)] - b[1] * omega[1],
        ]
    }

    fn velocity_drift_gain(&self, _mode: usize) -> [[f64; 2]; 5] {
        let b = self.params.b;
        [[1.0, 0.0], [0.0, 1.0], [0.0, 0.0], [-b[0], 0.0], [0.0, -b[1]]]
    }

    fn diffusion(&self, _mode: usize) -> [[f64; 2]; 2] {
        let h = &self.params.hc;
        let mut d = [[0.0; 2]; 2];
        for (i, row) in d.iter_mut().enumerate() {
            for (j, v) in row.iter_mut().enumerate() {
                *v = 0.5 * (0..3).map(|k| h[i][k] * h[j][k]).sum::<f64>();
            }
        }
        d
    }

    fn noise_gain(&self, _mode: usize) -> [[f64; 3]; 2] {
        self.params.hc
    }

    fn has_jumps(&self) -> bool {
        self.collisions && self.params.lambda_max > 0.0
    }

    fn rate(&self, _mode: usize, r: &Matrix3<f64>, omega: [f64; 2]) -> f64 {
        if !self.has_jumps() {
            return 0.0;
        }
        let th = theta(r);
        if th < self.theta0 - self.params.theta_t || !self.approaching(r, omega) {
            return 0.0;
        }
        self.rate_profile(th)
    }

    fn kernel_density(&self, r: &Matrix3<f64>, om: [f64; 2], s: usize, op: [f64; 2], sp: usize) -> f64 {
        self.kernel_log_density(r, om, s, op, sp).exp()
    }

    fn kernel_log_density(&self, r: &Matrix3<f64>, om: [f64; 2], _s: usize, op: [f64; 2], _sp: usize) -> f64 {
        self.gaussian_log(self.reset_mean(r, om), op)
    }

    fn kernel_log_column(
        &self,
        r: &Matrix3<f64>,
        omega_minus: [f64; 2],
        _mode_minus: usize,
        _mode_plus: usize,
        omega_plus: &[[f64; 2]],
        out: &mut [f64],
    ) {
        let mean = self.reset_mean(r, omega_minus);
        for (o, &x) in out.iter_mut().zip(omega_plus) {
            *o = self.gaussian_log(mean, x);
        }
    }

    fn sample_reset(&self, state: &HybridState, rng: &mut dyn RngCore) -> HybridState {
        let mean = self.reset_mean(&state.r, state.omega);
        let xi = self.hd_sample(rng);
        HybridState::new(state.r, [mean[0] + xi[0], mean[1] + xi[1]], state.mode)
    }

    fn initial_density(&self, ws: &HarmonicWorkspace) -> Result<GridDensity> {
        let band = ws.band();
        let k_len = band.torus_len();
        let var = self.params.omega_std.powi(2);
        let att_log: Vec<f64> = (0..band.attitude_len())
            .map(|a| (self.fisher.transpose() * grid_rotation(ws, a)).trace())
            .collect();
        let vel_log: Vec<f64> = (0..k_len)
            .map(|k| {
                let o = grid_omega(ws, k);
                -(o[0] * o[0] + o[1] * o[1]) / (2.0 * var)
            })
            .collect();
        let amax = att_log.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let vmax = vel_log.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut data = Vec::with_capacity(band.grid_len());
        for a in &att_log {
            let pa = (a - amax).exp();
            data.extend(vel_log.iter().map(|v| pa * (v - vmax).exp()));
        }
        let mut p = GridDensity::from_vec(band, 1, data)?;
        let total = p.total_probability(ws);
        if !(total > 0.0 && total.is_finite()) {
            return Err(Error::InitialProbability { total, tolerance: 0.0 });
        }
        p.scale(1.0 / total);
        Ok(p)
    }

    fn sample_initial(&self, rng: &mut dyn RngCore) -> HybridState {
        let r = self.fisher_sampler.sample(rng);
        let s = self.params.omega_std;
        let a: f64 = rng.sample(StandardNormal);
        let b: f64 = rng.sample(StandardNormal);
        HybridState::new(r, [s * a, s * b], 0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harmonic::BandLimit;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn pendulum() -> Pendulum {
        Pendulum::new(PendulumParams::default(), true).unwrap()
    }

    /// Attitude with inclination `th` towards the wall, tilted about `e2`.
    fn tilted(th: f64) -> Matrix3<f64> {
        so3::rot_y(th)
    }

    #[test]
    fn gravity_drift() {
        let p = pendulum();
        assert_eq!(p.drift(0.0, 0, &Matrix3::identity(), [0.0; 2]), [0.0; 5]);
        let r = so3::exp(&Vector3::new(0.0, -2.0 * PI / 3.0, 0.0));
        let a = p.drift(0.0, 0, &r, [0.0; 2]);
        let c = 1.0642 * 9.8 * 0.1 / 0.0144;
        assert!(a[3].abs() < 1e-12);
        // R31 = +sin(2 pi / 3) for this rotation
        assert!((a[4] + c * (2.0 * PI / 3.0).sin()).abs() < 1e-10);
        let a = p.drift(0.0, 0, &r, [1.0, 2.0]);
        assert_eq!(&a[..3], &[1.0, 2.0, 0.0]);
    }

    #[test]
    fn velocity_gain_reproduces_linear_part() {
        let p = pendulum();
        let r = so3::rot_x(0.3) * so3::rot_z(1.1);
        let om = [0.7, -1.3];
        let full = p.drift(0.0, 0, &r, om);
        let base = p.drift(0.0, 0, &r, [0.0; 2]);
        let c = p.velocity_drift_gain(0);
        for k in 0..5 {
            let lin = c[k][0] * om[0] + c[k][1] * om[1];
            assert!((full[k] - base[k] - lin).abs() < 1e-12);
        }
    }

    #[test]
    fn inclination() {
        assert_eq!(theta(&Matrix3::identity()), 0.0);
        let r = so3::exp(&Vector3::new(0.0, -PI / 2.0, 0.0));
        assert!((theta(&r) + PI / 2.0).abs() < 1e-7);
        let r = so3::exp(&Vector3::new(0.0, -2.0 * PI / 3.0, 0.0));
        assert!((theta(&r) + PI / 3.0).abs() < 1e-12);
        assert!((theta(&tilted(0.4)) - 0.4).abs() < 1e-12);
    }

    #[test]
    fn contact_angle_and_point() {
        let p = pendulum();
        let rho = 0.040625f64.sqrt();
        let want = (0.12 / rho).asin() - (0.025 / rho).asin();
        assert!((p.theta0() - want).abs() < 1e-12);
        assert!((p.theta0() - 0.51340).abs() < 1e-4);
        let r = tilted(p.theta0());
        assert!((p.varrho(&r).x - 0.12).abs() < 1e-9);
        for th in [-1.0, -0.2, 0.3, 0.9] {
            let v = p.varrho(&tilted(th));
            assert!((v.x - (0.2 * th.sin() + 0.025 * th.cos())).abs() < 1e-12);
        }
    }

    #[test]
    fn rate_branches() {
        let p = pendulum();
        let towards = [0.0, 5.0];
        let away = [0.0, -5.0];
        let (t0, tt) = (p.theta0(), p.params().theta_t);
        assert!(p.approaching(&tilted(t0), towards));
        assert!((p.rate(0, &tilted(t0), towards) - 50.0).abs() < 1e-9);
        assert!((p.rate(0, &tilted(t0 + tt), towards) - 100.0).abs() < 1e-9);
        assert_eq!(p.rate(0, &tilted(t0 + 0.3), away), 0.0);
        assert_eq!(p.rate(0, &tilted(t0), away), 0.0);
        assert_eq!(p.rate(0, &tilted(t0 - 2.0 * tt), towards), 0.0);
        for edge in [t0 - tt, t0 + tt] {
            let lo = p.rate_profile(edge - 1e-9);
            let hi = p.rate_profile(edge + 1e-9);
            assert!((lo - hi).abs() < 1e-6 * 100.0);
        }
        let quiet = Pendulum::new(PendulumParams::default(), false).unwrap();
        assert_eq!(quiet.rate(0, &tilted(t0 + 0.2), towards), 0.0);
    }

    #[test]
    fn reset_reflects_normal_component() {
        let p = pendulum();
        let r = tilted(p.theta0()) * so3::rot_z(0.4);
        let n = r.transpose() * p.contact_tangent(&r).unwrap();
        assert!(n.z.abs() < 1e-12);
        let tangential = Vector3::new(-n.y, n.x, 0.0) * 3.0;
        let out = p.reset_mean(&r, [tangential.x, tangential.y]);
        assert!((out[0] - tangential.x).abs() < 1e-12 && (out[1] - tangential.y).abs() < 1e-12);
        let normal = n * 2.0;
        let out = p.reset_mean(&r, [normal.x, normal.y]);
        assert!((out[0] + 0.8 * normal.x).abs() < 1e-12 && (out[1] + 0.8 * normal.y).abs() < 1e-12);
        let mut params = PendulumParams::default();
        params.epsilon = 1.0;
        let elastic = Pendulum::new(params, true).unwrap();
        let out = elastic.reset_mean(&r, [normal.x, normal.y]);
        assert!((out[0] + normal.x).abs() < 1e-12 && (out[1] + normal.y).abs() < 1e-12);
    }

    #[test]
    fn reset_is_dissipative() {
        let p = pendulum();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..200 {
            let v = Vector3::from_fn(|_, _| rng.random_range(-3.0..3.0));
            let r = so3::exp(&v);
            let om = [rng.random_range(-8.0..8.0), rng.random_range(-8.0..8.0)];
            let out = p.reset_mean(&r, om);
            assert!(out[0].hypot(out[1]) <= om[0].hypot(om[1]) + 1e-12);
        }
    }

    #[test]
    fn reset_kernel_values() {
        let p = pendulum();
        let r = tilted(0.6);
        let om = [0.0, 5.0];
        let mean = p.reset_mean(&r, om);
        let peak = p.kernel_density(&r, om, 0, mean, 0);
        assert!((peak - 1.0 / (2.0 * PI * 0.0025)).abs() < 1e-9);
        assert!((peak - 63.66).abs() < 0.01);
        let far = p.kernel_density(&r, om, 0, [mean[0] + 0.5, mean[1]], 0);
        // ten standard deviations: peak * exp(-50), about 1.2e-20
        assert!((far / (peak * (-50f64).exp()) - 1.0).abs() < 1e-9);
        assert!(far < 1.3e-20);
        let mut col = vec![0.0; 2];
        p.kernel_log_column(&r, om, 0, 0, &[mean, [1.0, 2.0]], &mut col);
        assert!((col[0] - peak.ln()).abs() < 1e-12);
        assert!((col[1] - p.kernel_log_density(&r, om, 0, [1.0, 2.0], 0)).abs() < 1e-12);
    }

    #[test]
    fn initial_density_shape() {
        let band = BandLimit::new(6, 8, 14.5).unwrap();
        let ws = HarmonicWorkspace::build(band).unwrap();
        let p = pendulum();
        let d = p.initial_density(&ws).unwrap();
        assert!((d.total_probability(&ws) - 1.0).abs() < 1e-12);
        let k_len = band.torus_len();
        let (best, _) = d
            .as_slice()
            .iter()
            .enumerate()
            .fold((0, f64::MIN), |acc, (i, &v)| if v > acc.1 { (i, v) } else { acc });
        let r = grid_rotation(&ws, best / k_len);
        let r0 = so3::rot_y(-2.0 * PI / 3.0);
        // within one grid cell of the Fisher mode
        assert!(so3::geodesic_distance(&r, &r0) < PI / 6.0);
        // velocity standard deviation from the grid marginal
        let w = ws.torus_grid().lebesgue_weight;
        let mut second = 0.0;
        let n_att = band.attitude_len();
        let wq = &ws.so3_grid().weights;
        let n = ws.so3_grid().len();
        for a in 0..n_att {
            let nu2 = (a / n) % n;
            for k in 0..k_len {
                let om = grid_omega(&ws, k);
                second += wq[nu2] * w * d.as_slice()[a * k_len + k] * om[0] * om[0];
            }
        }
        assert!((second.sqrt() - 2.0).abs() < 0.04, "std {}", second.sqrt());
    }

    #[test]
    fn rejects_bad_parameters() {
        let mut p = PendulumParams::default();
        p.d_wall = 0.3;
        assert!(p.validate().is_err());
        let mut p = PendulumParams::default();
        p.epsilon = 0.0;
        assert!(p.validate().is_err());
        let mut p = PendulumParams::default();
        p.m_mass = -1.0;
        assert!(p.validate().is_err());
        assert!(PendulumParams::default().validate().is_ok());
    }

    #[test]
    fn sampled_reset_scatter() {
        let p = pendulum();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let s = HybridState::new(tilted(0.6), [0.0, 5.0], 0);
        let mean = p.reset_mean(&s.r, s.omega);
        let n = 20000;
        let mut acc = [0.0; 2];
        let mut sq = 0.0;
        for _ in 0..n {
            let out = p.sample_reset(&s, &mut rng);
            acc[0] += out.omega[0] / n as f64;
            acc[1] += out.omega[1] / n as f64;
            sq += (out.omega[0] - mean[0]).powi(2) / n as f64;
            assert_eq!(out.r, s.r);
        }
        assert!((acc[0] - mean[0]).abs() < 0.003 && (acc[1] - mean[1]).abs() < 0.003);
        assert!((sq.sqrt() - 0.05).abs() < 0.002);
    }
}
