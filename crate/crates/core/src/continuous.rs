//! Spectral propagation of the Fokker-Planck equation of the continuous
//! dynamics, one mode at a time.
//!
//! The drift on each axis is split into `C omega + residual`. Products with
//! `omega` use the torus convolution with the sawtooth series; residuals
//! that depend only on `(beta, gamma)` use the exact attitude-field product;
//! anything else is multiplied on the grid.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::harmonic::{
    accumulate_derivative, accumulate_torus_convolution, sawtooth_coefficients, GridDensity,
    HarmonicWorkspace, SpectralCoeffs, SpectralDensity, TorusCoefficients, C64,
};
use crate::model::{grid_omega, grid_rotation, GshsModel};

/// RK4 is stable for `dt |lambda| < 2.8` on the negative real axis.
const RK4_STABILITY_BOUND: f64 = 2.8;
const EULER_STABILITY_BOUND: f64 = 2.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Integrator {
    Euler,
    #[default]
    Rk4,
}

/// How the nonzero residual drift on one axis is multiplied with the
/// density. Axes whose residual vanishes on the grid are skipped.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ResidualKind {
    /// A field of `(beta, gamma)` only.
    Attitude,
    /// Anything else; multiplied on the grid every evaluation.
    Generic,
}

#[derive(Debug)]
struct AxisResidual {
    axis: usize,
    kind: ResidualKind,
    /// `[nu2][nu3]` values for attitude fields; full grid values for
    /// time-invariant generic fields; empty otherwise.
    values: Vec<f64>,
}

#[derive(Debug)]
struct ModeTerms {
    gain: [[f64; 2]; 5],
    residuals: Vec<AxisResidual>,
    /// `-(pi/L)^2 (D11 n1^2 + 2 D12 n1 n2 + D22 n2^2)` per torus index.
    diffusion: Vec<f64>,
}

/// Fixed-step integrator of the coefficient ODE.
pub struct ContinuousStepper<'a> {
    ws: &'a HarmonicWorkspace,
    model: &'a dyn GshsModel,
    scheme: Integrator,
    dt: f64,
    drift_threshold: f64,
    sawtooth: [TorusCoefficients; 2],
    modes: Vec<ModeTerms>,
}

/// Relative tolerance used to classify residual drift fields.
const CLASSIFY_TOL: f64 = 1e-12;

impl<'a> ContinuousStepper<'a> {
    pub fn new(
        ws: &'a HarmonicWorkspace,
        model: &'a dyn GshsModel,
        scheme: Integrator,
        dt: f64,
    ) -> Result<Self> {
        if !(dt >= 0.0 && dt.is_finite()) {
            return Err(Error::InvalidParameter(format!("dt must be non-negative, got {dt}")));
        }
        let band = ws.band();
        let modes = (0..model.n_modes())
            .map(|s| classify_mode(ws, model, s))
            .collect::<Result<Vec<_>>>()?;
        let stepper = Self {
            ws,
            model,
            scheme,
            dt,
            drift_threshold: 1e-6,
            sawtooth: [sawtooth_coefficients(band, 0), sawtooth_coefficients(band, 1)],
            modes,
        };
        stepper.check_stability();
        Ok(stepper)
    }

    /// Largest allowed change of total probability per step.
    pub fn with_drift_threshold(mut self, threshold: f64) -> Self {
        self.drift_threshold = threshold;
        self
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn scheme(&self) -> Integrator {
        self.scheme
    }

    /// Classification of the residual drift on each of the five axes.
    pub fn residual_kinds(&self, mode: usize) -> Vec<(usize, ResidualKind)> {
        self.modes[mode]
            .residuals
            .iter()
            .map(|r| (r.axis, r.kind.clone()))
            .collect()
    }

    /// `dt` times the largest diffusion decay rate on the band.
    pub fn stiffness(&self) -> f64 {
        self.modes
            .iter()
            .flat_map(|m| m.diffusion.iter())
            .fold(0.0f64, |acc, v| acc.max(-v))
            * self.dt
    }

    fn check_stability(&self) {
        let bound = match self.scheme {
            Integrator::Rk4 => RK4_STABILITY_BOUND,
            Integrator::Euler => EULER_STABILITY_BOUND,
        };
        let s = self.stiffness();
        if s > bound {
            log::warn!("diffusion stiffness dt * max decay = {s:.3} exceeds the stability bound {bound}");
        }
    }

    /// Time derivative of one mode's coefficients.
    pub fn rhs(&self, f: &SpectralCoeffs, t: f64, mode: usize) -> Result<SpectralCoeffs> {
        let terms = &self.modes[mode];
        let band = self.ws.band();
        let mut out = SpectralCoeffs::zeros(band);
        for (i, saw) in self.sawtooth.iter().enumerate() {
            if terms.gain.iter().all(|row| row[i] == 0.0) {
                continue;
            }
            let mut prod = SpectralCoeffs::zeros(band);
            accumulate_torus_convolution(&mut prod, f, saw, 1.0)?;
            for (j, row) in terms.gain.iter().enumerate() {
                if row[i] != 0.0 {
                    accumulate_derivative(&mut out, &prod, j + 1, -row[i])?;
                }
            }
        }
        let attitude: Vec<&AxisResidual> = terms
            .residuals
            .iter()
            .filter(|r| r.kind == ResidualKind::Attitude)
            .collect();
        if !attitude.is_empty() {
            let fields: Vec<&[f64]> = attitude.iter().map(|r| r.values.as_slice()).collect();
            let prods = self.ws.multiply_attitude_fields(f, &fields)?;
            for (r, p) in attitude.iter().zip(&prods) {
                accumulate_derivative(&mut out, p, r.axis, -1.0)?;
            }
        }
        let generic: Vec<&AxisResidual> = terms
            .residuals
            .iter()
            .filter(|r| r.kind == ResidualKind::Generic)
            .collect();
        if !generic.is_empty() {
            let grid = self.ws.inverse_transform(f)?;
            for r in generic {
                let values = if r.values.is_empty() {
                    residual_on_grid(self.ws, self.model, mode, r.axis, t, &terms.gain)
                } else {
                    r.values.clone()
                };
                let prod: Vec<C64> = grid.iter().zip(&values).map(|(g, v)| g * v).collect();
                let p = self.ws.forward_transform(&prod)?;
                accumulate_derivative(&mut out, &p, r.axis, -1.0)?;
            }
        }
        let d2 = |l: usize| (2 * l + 1) * (2 * l + 1);
        for l in 0..band.l0() {
            let src = f.degree(l);
            let d = d2(l);
            let dst = out.degree_mut(l);
            for (k, &decay) in terms.diffusion.iter().enumerate() {
                if decay == 0.0 {
                    continue;
                }
                let s = &src[k * d..(k + 1) * d];
                dst[k * d..(k + 1) * d]
                    .iter_mut()
                    .zip(s)
                    .for_each(|(o, s)| *o += s * decay);
            }
        }
        Ok(out)
    }

    /// Time derivative of a grid density, returned in coefficient space.
    pub fn continuous_rhs(&self, p: &GridDensity, t: f64, mode: usize) -> Result<SpectralCoeffs> {
        if let Some(idx) = p.first_non_finite() {
            return Err(Error::NonFinite {
                step: 0,
                context: format!("input density at flat index {idx}"),
            });
        }
        let f = self.ws.forward_real(p.mode(mode))?;
        self.rhs(&f, t, mode)
    }

    /// Advances one mode's coefficients by `dt`.
    pub fn advance(&self, f: &SpectralCoeffs, t: f64, mode: usize) -> Result<SpectralCoeffs> {
        let dt = self.dt;
        if dt == 0.0 {
            return Ok(f.clone());
        }
        let out = match self.scheme {
            Integrator::Euler => {
                let k1 = self.rhs(f, t, mode)?;
                let mut y = f.clone();
                y.add_scaled(dt, &k1);
                y
            }
            Integrator::Rk4 => {
                let k1 = self.rhs(f, t, mode)?;
                let mut y = f.clone();
                y.add_scaled(0.5 * dt, &k1);
                let k2 = self.rhs(&y, t + 0.5 * dt, mode)?;
                let mut y = f.clone();
                y.add_scaled(0.5 * dt, &k2);
                let k3 = self.rhs(&y, t + 0.5 * dt, mode)?;
                let mut y = f.clone();
                y.add_scaled(dt, &k3);
                let k4 = self.rhs(&y, t + dt, mode)?;
                let mut y = f.clone();
                y.add_scaled(dt / 6.0, &k1);
                y.add_scaled(dt / 3.0, &k2);
                y.add_scaled(dt / 3.0, &k3);
                y.add_scaled(dt / 6.0, &k4);
                y
            }
        };
        if !out.is_finite() {
            return Err(Error::NonFinite {
                step: 0,
                context: format!("continuous step of mode {mode} at t = {t}"),
            });
        }
        Ok(out)
    }

    /// One step of every mode in coefficient space.
    pub fn step_spectral(&self, f: &SpectralDensity, t: f64) -> Result<SpectralDensity> {
        let modes = f
            .modes
            .iter()
            .enumerate()
            .map(|(s, m)| self.advance(m, t, s))
            .collect::<Result<Vec<_>>>()?;
        let out = SpectralDensity { modes };
        let drift = (out.total_probability() - f.total_probability()).abs();
        if !(drift <= self.drift_threshold) {
            return Err(Error::ProbabilityDrift {
                drift,
                threshold: self.drift_threshold,
            });
        }
        Ok(out)
    }

    /// One step on the grid: transform, advance, synthesize.
    pub fn step(&self, p: &GridDensity, t: f64) -> Result<GridDensity> {
        if self.dt == 0.0 {
            return Ok(p.clone());
        }
        let f = self.ws.forward_density(p)?;
        let f = self.step_spectral(&f, t)?;
        self.ws.inverse_density(&f)
    }
}

impl std::fmt::Debug for ContinuousStepper<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ContinuousStepper")
            .field("scheme", &self.scheme)
            .field("dt", &self.dt)
            .field("modes", &self.modes)
            .finish_non_exhaustive()
    }
}

/// `drift_axis - C omega` on the full grid of one mode.
fn residual_on_grid(
    ws: &HarmonicWorkspace,
    model: &dyn GshsModel,
    mode: usize,
    axis: usize,
    t: f64,
    gain: &[[f64; 2]; 5],
) -> Vec<f64> {
    let band = ws.band();
    let k_len = band.torus_len();
    let omegas: Vec<[f64; 2]> = (0..k_len).map(|k| grid_omega(ws, k)).collect();
    let g = gain[axis - 1];
    let mut out = Vec::with_capacity(band.grid_len());
    for att in 0..band.attitude_len() {
        let r = grid_rotation(ws, att);
        for om in &omegas {
            let a = model.drift(t, mode, &r, *om)[axis - 1];
            out.push(a - g[0] * om[0] - g[1] * om[1]);
        }
    }
    out
}

fn classify_mode(ws: &HarmonicWorkspace, model: &dyn GshsModel, mode: usize) -> Result<ModeTerms> {
    let band = ws.band();
    let gain = model.velocity_drift_gain(mode);
    let n = band.so3_points();
    let k_len = band.torus_len();
    let mut residuals = Vec::new();
    for axis in 1..=5 {
        let values = residual_on_grid(ws, model, mode, axis, 0.0, &gain);
        if let Some(bad) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                step: 0,
                context: format!("drift axis {axis} of mode {mode} at grid index {bad}"),
            });
        }
        let scale = values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if scale == 0.0 {
            continue;
        }
        if model.is_time_invariant() {
            // attitude-only when constant over alpha and the torus
            let tol = CLASSIFY_TOL * scale;
            let field: Vec<f64> = (0..n * n).map(|bg| values[bg * k_len]).collect();
            let attitude_only = values.chunks(k_len).enumerate().all(|(att, chunk)| {
                let reference = field[att % (n * n)];
                chunk.iter().all(|v| (v - reference).abs() <= tol)
            });
            if attitude_only {
                residuals.push(AxisResidual {
                    axis,
                    kind: ResidualKind::Attitude,
                    values: field,
                });
                continue;
            }
            residuals.push(AxisResidual {
                axis,
                kind: ResidualKind::Generic,
                values,
            });
        } else {
            residuals.push(AxisResidual {
                axis,
                kind: ResidualKind::Generic,
                values: Vec::new(),
            });
        }
    }
    let d = model.diffusion(mode);
    let n0 = band.n0() as i64;
    let m = 2 * n0;
    let c = (PI / band.half_width()).powi(2);
    let diffusion = (0..m * m)
        .map(|k| {
            let (n1, n2) = ((k / m - n0) as f64, (k % m - n0) as f64);
            -c * (d[0][0] * n1 * n1 + (d[0][1] + d[1][0]) * n1 * n2 + d[1][1] * n2 * n2)
        })
        .collect();
    Ok(ModeTerms {
        gain,
        residuals,
        diffusion,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harmonic::BandLimit;
    use crate::model::testing::ToyModel;
    use crate::pendulum::{Pendulum, PendulumParams};

    fn random_coeffs(ws: &HarmonicWorkspace, seed: u64) -> SpectralCoeffs {
        // real density: forward transform of a smooth positive grid function
        let band = ws.band();
        let k_len = band.torus_len();
        let mut vals = Vec::with_capacity(band.grid_len());
        let s = seed as f64;
        for att in 0..band.attitude_len() {
            let r = grid_rotation(ws, att);
            for k in 0..k_len {
                let o = grid_omega(ws, k);
                vals.push(
                    1.0 + 0.3 * (r[(0, 2)] * (1.0 + s)).sin()
                        + 0.2 * r[(1, 0)] * (0.4 * o[0] + 0.1 * s).cos()
                        + 0.1 * (0.3 * o[1]).sin() * r[(2, 2)],
                );
            }
        }
        ws.forward_real(&vals).unwrap()
    }

    #[test]
    fn no_dynamics_gives_zero_derivative() {
        let band = BandLimit::new(3, 3, 2.0).unwrap();
        let ws = HarmonicWorkspace::build(band).unwrap();
        let model = ToyModel::quiet(band);
        let stepper = ContinuousStepper::new(&ws, &model, Integrator::Rk4, 0.01).unwrap();
        let f = random_coeffs(&ws, 1);
        assert_eq!(stepper.rhs(&f, 0.0, 0).unwrap().norm(), 0.0);
        assert!(stepper.residual_kinds(0).is_empty());
    }

    #[test]
    fn heat_equation_rhs() {
        let band = BandLimit::new(2, 4, 3.0).unwrap();
        let ws = HarmonicWorkspace::build(band).unwrap();
        let mut model = ToyModel::quiet(band);
        let sigma2: f64 = 0.8;
        model.diffusion = [[sigma2 / 2.0, 0.0], [0.0, sigma2 / 2.0]];
        let stepper = ContinuousStepper::new(&ws, &model, Integrator::Rk4, 0.01).unwrap();
        let f = random_coeffs(&ws, 2);
        let d = stepper.rhs(&f, 0.0, 0).unwrap();
        let c = (PI / 3.0).powi(2);
        for l in 0..2 {
            for n1 in -4..4i64 {
                for n2 in -4..4i64 {
                    for m1 in -(l as i64)..=(l as i64) {
                        for m2 in -(l as i64)..=(l as i64) {
                            let want = f.get(l, [n1, n2], m1, m2)
                                * (-(sigma2 / 2.0) * c * (n1 * n1 + n2 * n2) as f64);
                            assert!((d.get(l, [n1, n2], m1, m2) - want).norm() < 1e-14);
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn zero_step_is_identity() {
        let band = BandLimit::new(3, 3, 2.0).unwrap();
        let ws = HarmonicWorkspace::build(band).unwrap();
        let mut model = ToyModel::quiet(band);
        model.drift = [0.3, 0.0, -0.2, 0.1, 0.0];
        let stepper = ContinuousStepper::new(&ws, &model, Integrator::Rk4, 0.0).unwrap();
        let p = model.initial_density(&ws).unwrap();
        assert_eq!(stepper.step(&p, 0.0).unwrap(), p);
    }

    /// Oracle: dF/dt by multiplying on the grid and differentiating spectrally.
    fn grid_oracle_rhs(ws: &HarmonicWorkspace, model: &dyn GshsModel, f: &SpectralCoeffs) -> SpectralCoeffs {
        let band = ws.band();
        let grid = ws.inverse_transform(f).unwrap();
        let k_len = band.torus_len();
        let mut out = SpectralCoeffs::zeros(band);
        for axis in 1..=5 {
            let mut prod = Vec::with_capacity(grid.len());
            for att in 0..band.attitude_len() {
                let r = grid_rotation(ws, att);
                for k in 0..k_len {
                    let a = model.drift(0.0, 0, &r, grid_omega(ws, k))[axis - 1];
                    prod.push(grid[att * k_len + k] * a);
                }
            }
            let p = ws.forward_transform(&prod).unwrap();
            accumulate_derivative(&mut out, &p, axis, -1.0).unwrap();
        }
        out
    }

    #[test]
    fn pendulum_residuals_are_attitude_fields() {
        let band = BandLimit::new(3, 3, 14.5).unwrap();
        let ws = HarmonicWorkspace::build(band).unwrap();
        let pend = Pendulum::new(PendulumParams::default(), false).unwrap();
        let stepper = ContinuousStepper::new(&ws, &pend, Integrator::Rk4, 0.005).unwrap();
        assert_eq!(
            stepper.residual_kinds(0),
            vec![(4, ResidualKind::Attitude), (5, ResidualKind::Attitude)]
        );
    }

    #[test]
    fn attitude_residual_matches_grid_product() {
        // without the velocity terms the spectral and grid products agree
        // exactly; the sawtooth part is compared separately below
        struct GravityOnly(Pendulum);
        impl GshsModel for GravityOnly {
            fn drift(&self, t: f64, s: usize, r: &nalgebra::Matrix3<f64>, o: [f64; 2]) -> [f64; 5] {
                let mut a = self.0.drift(t, s, r, o);
                let b = self.0.params().b;
                a[0] = 0.0;
                a[1] = 0.0;
                a[3] += b[0] * o[0];
                a[4] += b[1] * o[1];
                a
            }
            fn diffusion(&self, _s: usize) -> [[f64; 2]; 2] {
                [[0.0; 2]; 2]
            }
            fn rate(&self, _s: usize, _r: &nalgebra::Matrix3<f64>, _o: [f64; 2]) -> f64 {
                0.0
            }
            fn kernel_density(&self, _: &nalgebra::Matrix3<f64>, _: [f64; 2], _: usize, _: [f64; 2], _: usize) -> f64 {
                0.0
            }
            fn sample_reset(&self, s: &crate::model::HybridState, _: &mut dyn rand::RngCore) -> crate::model::HybridState {
                *s
            }
            fn initial_density(&self, ws: &HarmonicWorkspace) -> Result<GridDensity> {
                self.0.initial_density(ws)
            }
            fn sample_initial(&self, rng: &mut dyn rand::RngCore) -> crate::model::HybridState {
                self.0.sample_initial(rng)
            }
        }
        let band = BandLimit::new(4, 3, 14.5).unwrap();
        let ws = HarmonicWorkspace::build(band).unwrap();
        let model = GravityOnly(Pendulum::new(PendulumParams::default(), false).unwrap());
        let stepper = ContinuousStepper::new(&ws, &model, Integrator::Rk4, 0.005).unwrap();
        let f = random_coeffs(&ws, 3);
        let got = stepper.rhs(&f, 0.0, 0).unwrap();
        let want = grid_oracle_rhs(&ws, &model, &f);
        let mut diff = got.clone();
        diff.add_scaled(-1.0, &want);
        assert!(diff.norm() < 1e-10 * want.norm(), "{} vs {}", diff.norm(), want.norm());
    }

    #[test]
    fn generic_drift_matches_grid_oracle() {
        struct Swirl;
        impl GshsModel for Swirl {
            fn drift(&self, _t: f64, _s: usize, r: &nalgebra::Matrix3<f64>, o: [f64; 2]) -> [f64; 5] {
                [r[(0, 1)], 0.0, r[(1, 1)], (0.2 * o[1]).cos(), r[(0, 0)]]
            }
            fn diffusion(&self, _s: usize) -> [[f64; 2]; 2] {
                [[0.1, 0.02], [0.02, 0.2]]
            }
            fn has_jumps(&self) -> bool {
                false
            }
            fn rate(&self, _s: usize, _r: &nalgebra::Matrix3<f64>, _o: [f64; 2]) -> f64 {
                0.0
            }
            fn kernel_density(&self, _: &nalgebra::Matrix3<f64>, _: [f64; 2], _: usize, _: [f64; 2], _: usize) -> f64 {
                0.0
            }
            fn sample_reset(&self, s: &crate::model::HybridState, _: &mut dyn rand::RngCore) -> crate::model::HybridState {
                *s
            }
            fn initial_density(&self, _ws: &HarmonicWorkspace) -> Result<GridDensity> {
                unreachable!()
            }
            fn sample_initial(&self, _rng: &mut dyn rand::RngCore) -> crate::model::HybridState {
                unreachable!()
            }
        }
        let band = BandLimit::new(3, 3, 4.0).unwrap();
        let ws = HarmonicWorkspace::build(band).unwrap();
        let stepper = ContinuousStepper::new(&ws, &Swirl, Integrator::Euler, 0.01).unwrap();
        let kinds = stepper.residual_kinds(0);
        assert!(kinds.iter().any(|(_, k)| *k == ResidualKind::Generic));
        let f = random_coeffs(&ws, 4);
        let mut want = grid_oracle_rhs(&ws, &Swirl, &f);
        // add the diffusion term by hand
        let c = (PI / 4.0).powi(2);
        let mut diff_term = SpectralCoeffs::zeros(band);
        for l in 0..3 {
            let li = l as i64;
            for n1 in -3..3i64 {
                for n2 in -3..3i64 {
                    let q = -c * (0.1 * (n1 * n1) as f64 + 0.04 * (n1 * n2) as f64 + 0.2 * (n2 * n2) as f64);
                    for m1 in -li..=li {
                        for m2 in -li..=li {
                            diff_term.set(l, [n1, n2], m1, m2, f.get(l, [n1, n2], m1, m2) * q);
                        }
                    }
                }
            }
        }
        want.add_scaled(1.0, &diff_term);
        let got = stepper.rhs(&f, 0.0, 0).unwrap();
        let mut d = got.clone();
        d.add_scaled(-1.0, &want);
        assert!(d.norm() < 1e-10 * want.norm());
    }

    #[test]
    fn rhs_is_linear_and_conserves_constant_mode() {
        let band = BandLimit::new(4, 4, 14.5).unwrap();
        let ws = HarmonicWorkspace::build(band).unwrap();
        let pend = Pendulum::new(PendulumParams::default(), false).unwrap();
        let stepper = ContinuousStepper::new(&ws, &pend, Integrator::Rk4, 0.005).unwrap();
        let f1 = random_coeffs(&ws, 5);
        let f2 = random_coeffs(&ws, 6);
        let mut combo = f1.clone();
        combo.scale(0.7);
        combo.add_scaled(-1.3, &f2);
        let mut want = stepper.rhs(&f1, 0.0, 0).unwrap();
        want.scale(0.7);
        want.add_scaled(-1.3, &stepper.rhs(&f2, 0.0, 0).unwrap());
        let got = stepper.rhs(&combo, 0.0, 0).unwrap();
        let mut d = got.clone();
        d.add_scaled(-1.0, &want);
        assert!(d.norm() < 1e-10 * want.norm().max(1.0));
        assert!(got.constant_term().norm() < 1e-14);
    }

    #[test]
    fn stiffness_estimate() {
        let band = BandLimit::new(2, 10, 14.5).unwrap();
        let ws = HarmonicWorkspace::build(band).unwrap();
        let mut model = ToyModel::quiet(band);
        model.diffusion = [[0.5, 0.0], [0.0, 0.5]];
        let stepper = ContinuousStepper::new(&ws, &model, Integrator::Rk4, 0.0025).unwrap();
        let want = 0.0025 * 0.5 * (PI / 14.5).powi(2) * 200.0;
        assert!((stepper.stiffness() - want).abs() < 1e-12);
    }
}
