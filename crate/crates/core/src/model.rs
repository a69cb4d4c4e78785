//! Model description consumed by both the spectral solver and the sampler.

use nalgebra::Matrix3;
use rand::RngCore;

use crate::error::{Error, Result};
use crate::harmonic::{GridDensity, HarmonicWorkspace};
use crate::so3;

/// A point of the hybrid state space SO(3) x T^2 x {0, .., N_s - 1}.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HybridState {
    pub r: Matrix3<f64>,
    pub omega: [f64; 2],
    pub mode: usize,
}

impl HybridState {
    pub fn new(r: Matrix3<f64>, omega: [f64; 2], mode: usize) -> Self {
        Self { r, omega, mode }
    }
}

/// How the reset kernel treats the attitude.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KernelKind {
    /// The attitude is unchanged by a jump; the kernel is a density over
    /// the angular velocity and the post-jump mode only.
    AttitudePreserving,
    /// The kernel is a density over the whole post-jump state.
    General,
}

/// Drift, diffusion, jump rate and reset kernel of a stochastic hybrid
/// system on SO(3) x T^2. Implementations must be pure and thread-safe.
///
/// The drift has five components: three left-trivialized SO(3) axes and
/// the two torus axes. Diffusion acts on the torus axes only.
pub trait GshsModel: Send + Sync {
    fn n_modes(&self) -> usize {
        1
    }

    fn drift(&self, t: f64, mode: usize, r: &Matrix3<f64>, omega: [f64; 2]) -> [f64; 5];

    /// Optional split `drift = C omega + residual(t, mode, R, omega)` with a
    /// constant gain `C` (rows are the five axes). Products with `omega`
    /// are then formed spectrally; only the residual is sampled on the grid.
    fn velocity_drift_gain(&self, _mode: usize) -> [[f64; 2]; 5] {
        [[0.0; 2]; 5]
    }

    /// Whether `drift`, `rate` and the kernel ignore `t`.
    fn is_time_invariant(&self) -> bool {
        true
    }

    /// Diffusion matrix `D = b b^T / 2` on the torus axes.
    fn diffusion(&self, mode: usize) -> [[f64; 2]; 2];

    /// Noise gain `H` (2 x 3) with `H H^T = 2 D`, used by the sampler.
    /// Defaults to the Cholesky factor of `2 D` padded with a zero column.
    fn noise_gain(&self, mode: usize) -> [[f64; 3]; 2] {
        let d = self.diffusion(mode);
        let a = (2.0 * d[0][0]).max(0.0).sqrt();
        let b = if a > 0.0 { 2.0 * d[1][0] / a } else { 0.0 };
        let c = (2.0 * d[1][1] - b * b).max(0.0).sqrt();
        [[a, 0.0, 0.0], [b, c, 0.0]]
    }

    /// Whether the model can jump at all. Returning `false` lets the solver
    /// skip rate evaluation entirely.
    fn has_jumps(&self) -> bool {
        true
    }

    fn rate(&self, mode: usize, r: &Matrix3<f64>, omega: [f64; 2]) -> f64;

    fn kernel_kind(&self) -> KernelKind {
        KernelKind::AttitudePreserving
    }

    /// Kernel density `kappa(omega_plus, mode_plus | R, omega_minus, mode_minus)`
    /// with respect to Lebesgue measure on the torus.
    fn kernel_density(
        &self,
        r: &Matrix3<f64>,
        omega_minus: [f64; 2],
        mode_minus: usize,
        omega_plus: [f64; 2],
        mode_plus: usize,
    ) -> f64;

    /// Natural log of [`Self::kernel_density`]; override when the density
    /// underflows on the grid (sharp kernels).
    fn kernel_log_density(
        &self,
        r: &Matrix3<f64>,
        omega_minus: [f64; 2],
        mode_minus: usize,
        omega_plus: [f64; 2],
        mode_plus: usize,
    ) -> f64 {
        self.kernel_density(r, omega_minus, mode_minus, omega_plus, mode_plus)
            .ln()
    }

    /// Log kernel for one source over many destination velocities. Override
    /// to hoist per-source work (such as a reset map) out of the loop.
    fn kernel_log_column(
        &self,
        r: &Matrix3<f64>,
        omega_minus: [f64; 2],
        mode_minus: usize,
        mode_plus: usize,
        omega_plus: &[[f64; 2]],
        out: &mut [f64],
    ) {
        for (o, &op) in out.iter_mut().zip(omega_plus) {
            *o = self.kernel_log_density(r, omega_minus, mode_minus, op, mode_plus);
        }
    }

    /// Kernel over the full post-jump state (Haar x Lebesgue), used only
    /// when [`Self::kernel_kind`] is [`KernelKind::General`].
    fn general_kernel_density(&self, _from: &HybridState, _to: &HybridState) -> f64 {
        0.0
    }

    /// Draws a post-jump state.
    fn sample_reset(&self, state: &HybridState, rng: &mut dyn RngCore) -> HybridState;

    /// Initial density on the grid, normalized to total probability one.
    fn initial_density(&self, ws: &HarmonicWorkspace) -> Result<GridDensity>;

    fn sample_initial(&self, rng: &mut dyn RngCore) -> HybridState;
}

/// Diagnostics reported by [`validate`].
#[derive(Debug, Clone, PartialEq)]
pub struct ValidationReport {
    /// True when the rate vanishes on the whole grid.
    pub no_jumps: bool,
    pub max_rate: f64,
    /// `max |sum_{s+} sum_mu w' kappa - 1|` over source points with positive
    /// rate, before renormalization. `None` when there are no jumps.
    pub kernel_defect: Option<f64>,
    /// Per-source defects `(mode, attitude index, torus index, defect)`.
    pub kernel_defects: Vec<(usize, usize, usize, f64)>,
    pub init_min: f64,
    pub init_max: f64,
    pub init_total: f64,
}

pub const INIT_TOLERANCE: f64 = 1e-3;

/// Rotation at attitude grid index `(nu1, nu2, nu3)` flattened row-major.
pub fn grid_rotation(ws: &HarmonicWorkspace, attitude: usize) -> Matrix3<f64> {
    let g = ws.so3_grid();
    let n = g.len();
    let (nu1, nu2, nu3) = (attitude / (n * n), (attitude / n) % n, attitude % n);
    so3::euler_zyz(g.alpha[nu1], g.beta[nu2], g.gamma[nu3])
}

/// Angular velocity at torus grid index `mu1 * M + mu2`.
pub fn grid_omega(ws: &HarmonicWorkspace, torus: usize) -> [f64; 2] {
    let om = &ws.torus_grid().omega;
    let m = om.len();
    [om[torus / m], om[torus % m]]
}

/// Checks a model against the grid: jump rates, kernel normalization and
/// the initial density.
pub fn validate(model: &dyn GshsModel, ws: &HarmonicWorkspace) -> Result<ValidationReport> {
    let band = ws.band();
    let n_att = band.attitude_len();
    let k_len = band.torus_len();
    let w = ws.torus_grid().lebesgue_weight;
    let mut max_rate = 0.0f64;
    let mut defects = Vec::new();
    let targets: Vec<[f64; 2]> = (0..k_len).map(|j| grid_omega(ws, j)).collect();
    let mut column = vec![0.0; k_len];
    if model.has_jumps() {
        for att in 0..n_att {
            let r = grid_rotation(ws, att);
            for s in 0..model.n_modes() {
                for src in 0..k_len {
                    let om = grid_omega(ws, src);
                    let lam = model.rate(s, &r, om);
                    if lam < 0.0 || lam.is_nan() {
                        return Err(Error::NegativeModelValue {
                            what: "jump rate",
                            value: lam,
                            location: format!("mode {s}, attitude {att}, torus {src}"),
                        });
                    }
                    max_rate = max_rate.max(lam);
                    if lam == 0.0 || model.kernel_kind() != KernelKind::AttitudePreserving {
                        continue;
                    }
                    let mut total = 0.0;
                    for sp in 0..model.n_modes() {
                        model.kernel_log_column(&r, om, s, sp, &targets, &mut column);
                        let lse = log_sum_exp(column.iter().copied(), w);
                        if lse.is_nan() {
                            return Err(Error::NegativeModelValue {
                                what: "reset kernel",
                                value: lse,
                                location: format!("mode {s}, attitude {att}, torus {src}"),
                            });
                        }
                        total += lse.exp();
                    }
                    defects.push((s, att, src, (total - 1.0).abs()));
                }
            }
        }
    }
    let init = model.initial_density(ws)?;
    let init_total = init.total_probability(ws);
    if (init_total - 1.0).abs() > INIT_TOLERANCE {
        return Err(Error::InitialProbability {
            total: init_total,
            tolerance: INIT_TOLERANCE,
        });
    }
    let no_jumps = max_rate == 0.0;
    Ok(ValidationReport {
        no_jumps,
        max_rate,
        kernel_defect: if no_jumps {
            None
        } else {
            Some(defects.iter().map(|d| d.3).fold(0.0, f64::max))
        },
        kernel_defects: defects,
        init_min: init.min(),
        init_max: init.max(),
        init_total,
    })
}

/// `log(sum_i w exp(x_i))` without overflow, ignoring `-inf` entries.
pub(crate) fn log_sum_exp(xs: impl Iterator<Item = f64> + Clone, weight: f64) -> f64 {
    let m = xs.clone().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + (weight * xs.map(|x| (x - m).exp()).sum::<f64>()).ln()
}
