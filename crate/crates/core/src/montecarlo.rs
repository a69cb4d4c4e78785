//! Monte Carlo simulation of hybrid executions: Euler-Maruyama on
//! SO(3) x T^2 with per-step Bernoulli jump triggering.
//!
//! Every sample draws from its own ChaCha stream `(seed, sample index)`, and
//! partial sums are reduced in a fixed order, so results do not depend on
//! the thread count.

use nalgebra::{Matrix3, Vector3};
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{GshsModel, HybridState};
use crate::so3;
use crate::stats::{FirstMoments, MomentSummary, SecondMoments};

/// Samples simulated sequentially by one task.
const CHUNK: usize = 512;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct McConfig {
    pub n_samples: usize,
    pub dt: f64,
    pub t_final: f64,
    pub seed: u64,
    pub snapshot_stride: usize,
    /// Euler-Maruyama steps per `dt`; moments stay on the `dt` grid.
    pub substeps: usize,
    /// Half-width of the angular-velocity window; leaving it is counted.
    pub window: f64,
}

impl McConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_samples == 0 {
            return Err(Error::InvalidParameter("n_samples must be at least 1".into()));
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::InvalidParameter(format!("dt must be positive, got {}", self.dt)));
        }
        if !(self.t_final >= self.dt) {
            return Err(Error::InvalidParameter(format!(
                "t_final = {} must be at least dt = {}",
                self.t_final, self.dt
            )));
        }
        if self.snapshot_stride == 0 {
            return Err(Error::InvalidParameter("snapshot stride must be at least 1".into()));
        }
        if self.substeps == 0 {
            return Err(Error::InvalidParameter("substeps must be at least 1".into()));
        }
        Ok(())
    }

    pub fn n_steps(&self) -> usize {
        (self.t_final / self.dt).round() as usize
    }

    /// Step indices at which moments are recorded: 0, every stride, and
    /// the last step.
    pub fn snapshot_steps(&self) -> Vec<usize> {
        let n = self.n_steps();
        let mut out: Vec<usize> = (0..=n).step_by(self.snapshot_stride).collect();
        if out.last() != Some(&n) {
            out.push(n);
        }
        out
    }
}

/// Random stream of one sample.
pub fn sample_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Euler-Maruyama step of the continuous dynamics. Returns the new state
/// and whether the angular velocity left `[-window, window)`.
pub fn sde_step(
    model: &dyn GshsModel,
    state: &HybridState,
    t: f64,
    dt: f64,
    window: f64,
    rng: &mut dyn RngCore,
) -> (HybridState, bool) {
    let a = model.drift(t, state.mode, &state.r, state.omega);
    let h = model.noise_gain(state.mode);
    let r = state.r * so3::exp(&(Vector3::new(a[0], a[1], a[2]) * dt));
    let xi: [f64; 3] = [rng.sample(StandardNormal), rng.sample(StandardNormal), rng.sample(StandardNormal)];
    let sq = dt.sqrt();
    let mut omega = state.omega;
    for i in 0..2 {
        let noise: f64 = (0..3).map(|k| h[i][k] * xi[k]).sum();
        omega[i] += dt * a[3 + i] + sq * noise;
    }
    let outside = omega.iter().any(|o| *o < -window || *o >= window);
    (HybridState::new(r, omega, state.mode), outside)
}

/// Jump with probability `1 - exp(-lambda dt)`. Returns the new state and
/// whether a jump occurred.
pub fn jump_step(model: &dyn GshsModel, state: &HybridState, dt: f64, rng: &mut dyn RngCore) -> (HybridState, bool) {
    let lam = model.rate(state.mode, &state.r, state.omega);
    if lam <= 0.0 {
        return (*state, false);
    }
    let u: f64 = rng.random();
    if u < -(-lam * dt).exp_m1() {
        (model.sample_reset(state, rng), true)
    } else {
        (*state, false)
    }
}

/// Moment time series of an ensemble and event counters.
#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleResult {
    pub summaries: Vec<MomentSummary>,
    /// Samples whose angular velocity left the window at least once.
    pub window_violations: u64,
    pub jumps: u64,
}

/// Simulates one sample, calling `record(slot, state)` at snapshot steps.
fn simulate(
    model: &dyn GshsModel,
    cfg: &McConfig,
    index: u64,
    snapshots: &[usize],
    mut record: impl FnMut(usize, &HybridState),
) -> (bool, u64) {
    let mut rng = sample_rng(cfg.seed, index);
    let mut state = model.sample_initial(&mut rng);
    let mut violated = false;
    let mut jumps = 0;
    let mut next = 0;
    if snapshots.first() == Some(&0) {
        record(0, &state);
        next = 1;
    }
    let h = cfg.dt / cfg.substeps as f64;
    for k in 0..cfg.n_steps() {
        for j in 0..cfg.substeps {
            let t = k as f64 * cfg.dt + j as f64 * h;
            let (s, out) = sde_step(model, &state, t, h, cfg.window, &mut rng);
            violated |= out;
            let (s, jumped) = jump_step(model, &s, h, &mut rng);
            jumps += jumped as u64;
            state = s;
        }
        if next < snapshots.len() && snapshots[next] == k + 1 {
            record(next, &state);
            next += 1;
        }
    }
    (violated, jumps)
}

/// Deterministic pairwise reduction of per-chunk partial sums.
fn reduce<T: Copy>(parts: &[T], merge: &impl Fn(&mut T, &T)) -> T {
    if parts.len() == 1 {
        return parts[0];
    }
    let mid = parts.len() / 2;
    let mut left = reduce(&parts[..mid], merge);
    merge(&mut left, &reduce(&parts[mid..], merge));
    left
}

fn chunks(n: usize) -> Vec<(u64, u64)> {
    (0..n.div_ceil(CHUNK))
        .map(|c| ((c * CHUNK) as u64, ((c + 1) * CHUNK).min(n) as u64))
        .collect()
}

/// Runs the ensemble twice with identical streams: the first pass gives the
/// means, the second the centered second moments.
pub fn run_ensemble(model: &dyn GshsModel, cfg: &McConfig) -> Result<EnsembleResult> {
    cfg.validate()?;
    let snaps = cfg.snapshot_steps();
    let n_snap = snaps.len();
    let ranges = chunks(cfg.n_samples);

    let first_parts: Vec<(Vec<FirstMoments>, u64, u64)> = ranges
        .par_iter()
        .map(|&(lo, hi)| {
            let mut acc = vec![FirstMoments::default(); n_snap];
            let (mut viol, mut jumps) = (0, 0);
            for i in lo..hi {
                let (v, j) = simulate(model, cfg, i, &snaps, |slot, s| acc[slot].add(1.0, &s.r, s.omega));
                viol += v as u64;
                jumps += j;
            }
            (acc, viol, jumps)
        })
        .collect();
    let window_violations = first_parts.iter().map(|p| p.1).sum();
    let jumps = first_parts.iter().map(|p| p.2).sum();
    let firsts: Vec<FirstMoments> = (0..n_snap)
        .map(|slot| {
            let column: Vec<FirstMoments> = first_parts.iter().map(|p| p.0[slot]).collect();
            reduce(&column, &|a: &mut FirstMoments, b: &FirstMoments| a.merge(b))
        })
        .collect();
    let means: Vec<(Matrix3<f64>, [f64; 2])> = firsts.iter().map(|f| (f.mean_rotation().0, f.mean_omega())).collect();

    let second_parts: Vec<Vec<SecondMoments>> = ranges
        .par_iter()
        .map(|&(lo, hi)| {
            let mut acc = vec![SecondMoments::default(); n_snap];
            for i in lo..hi {
                simulate(model, cfg, i, &snaps, |slot, s| {
                    let (mr, mo) = &means[slot];
                    acc[slot].add(1.0, mr, *mo, &s.r, s.omega)
                });
            }
            acc
        })
        .collect();
    let summaries = (0..n_snap)
        .map(|slot| {
            let column: Vec<SecondMoments> = second_parts.iter().map(|p| p[slot]).collect();
            let second = reduce(&column, &|a: &mut SecondMoments, b: &SecondMoments| a.merge(b));
            MomentSummary::from_moments(snaps[slot] as f64 * cfg.dt, &firsts[slot], &second)
        })
        .collect();
    if window_violations > 0 {
        log::warn!("{window_violations} samples left the angular-velocity window");
    }
    Ok(EnsembleResult {
        summaries,
        window_violations,
        jumps,
    })
}

/// Final states of an ensemble, for histogram checks and raw dumps.
pub fn sample_final_states(model: &dyn GshsModel, cfg: &McConfig) -> Result<Vec<HybridState>> {
    cfg.validate()?;
    let n = cfg.n_steps();
    Ok((0..cfg.n_samples as u64)
        .into_par_iter()
        .map(|i| {
            let mut last = None;
            simulate(model, cfg, i, &[n], |_, s| last = Some(*s));
            last.expect("final step recorded")
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harmonic::{BandLimit, GridDensity, HarmonicWorkspace};
    use crate::model::testing::ToyModel;
    use crate::pendulum::{Pendulum, PendulumParams};
    use std::f64::consts::PI;

    fn cfg(n: usize, dt: f64, t: f64) -> McConfig {
        McConfig {
            n_samples: n,
            dt,
            t_final: t,
            seed: 7,
            snapshot_stride: 1,
            substeps: 1,
            window: 100.0,
        }
    }

    #[test]
    fn quiet_step_leaves_state() {
        let band = BandLimit::new(1, 1, 1.0).unwrap();
        let toy = ToyModel::quiet(band);
        let s = HybridState::new(so3::rot_x(0.3), [0.2, -0.1], 0);
        let mut rng = sample_rng(1, 0);
        let (out, v) = sde_step(&toy, &s, 0.0, 0.01, 1.0, &mut rng);
        assert_eq!(out, s);
        assert!(!v);
    }

    #[test]
    fn constant_rate_half_turn() {
        // kinematics only: Omega = (1, 0) held fixed by zero drift on the torus
        struct Spin;
        impl GshsModel for Spin {
            fn drift(&self, _t: f64, _s: usize, _r: &Matrix3<f64>, o: [f64; 2]) -> [f64; 5] {
                [o[0], o[1], 0.0, 0.0, 0.0]
            }
            fn diffusion(&self, _s: usize) -> [[f64; 2]; 2] {
                [[0.0; 2]; 2]
            }
            fn has_jumps(&self) -> bool {
                false
            }
            fn rate(&self, _s: usize, _r: &Matrix3<f64>, _o: [f64; 2]) -> f64 {
                0.0
            }
            fn kernel_density(&self, _: &Matrix3<f64>, _: [f64; 2], _: usize, _: [f64; 2], _: usize) -> f64 {
                0.0
            }
            fn sample_reset(&self, s: &HybridState, _: &mut dyn RngCore) -> HybridState {
                *s
            }
            fn initial_density(&self, _ws: &HarmonicWorkspace) -> Result<GridDensity> {
                unreachable!()
            }
            fn sample_initial(&self, _rng: &mut dyn RngCore) -> HybridState {
                HybridState::new(Matrix3::identity(), [1.0, 0.0], 0)
            }
        }
        let s = HybridState::new(Matrix3::identity(), [1.0, 0.0], 0);
        let (out, _) = sde_step(&Spin, &s, 0.0, PI, 10.0, &mut sample_rng(0, 0));
        assert!(so3::geodesic_distance(&out.r, &so3::rot_x(PI)) < 1e-12);
        // R stays orthogonal over many exponential updates
        let mut s = HybridState::new(Matrix3::identity(), [1.3, -0.7], 0);
        for _ in 0..10_000 {
            s = sde_step(&Spin, &s, 0.0, 0.01, 10.0, &mut sample_rng(0, 0)).0;
        }
        assert!(so3::orthogonality_defect(&s.r) < 1e-9);
        // single sample without noise and jumps: the trajectory itself
        let res = run_ensemble(&Spin, &cfg(1, 0.01, 0.5)).unwrap();
        let last = res.summaries.last().unwrap();
        assert!(so3::geodesic_distance(&last.mean_r, &so3::rot_x(0.5)) < 1e-9);
        assert_eq!(last.std_omega, [0.0, 0.0]);
    }

    #[test]
    fn noise_variance_grows_linearly() {
        let band = BandLimit::new(1, 1, 1.0).unwrap();
        let mut toy = ToyModel::quiet(band);
        toy.diffusion = [[0.5, 0.0], [0.0, 0.5]];
        let n = 20_000;
        let (steps, dt) = (50, 0.01);
        let mut sq = [0.0; 2];
        for i in 0..n {
            let mut rng = sample_rng(3, i);
            let mut s = HybridState::new(Matrix3::identity(), [0.0; 2], 0);
            for _ in 0..steps {
                s = sde_step(&toy, &s, 0.0, dt, 10.0, &mut rng).0;
            }
            sq[0] += s.omega[0] * s.omega[0] / n as f64;
            sq[1] += s.omega[1] * s.omega[1] / n as f64;
        }
        // H H^T = 2 D = I, variance N dt = 0.5; relative std error ~1%
        for v in sq {
            assert!((v - 0.5).abs() < 0.03, "variance {v}");
        }
    }

    #[test]
    fn jump_fraction_matches_thinning() {
        let band = BandLimit::new(1, 1, 1.0).unwrap();
        let mut toy = ToyModel::quiet(band);
        toy.rate = 25.0;
        let dt = 0.01;
        let n = 1_000_000u64;
        let mut rng = sample_rng(11, 0);
        let s = HybridState::new(Matrix3::identity(), [0.0; 2], 0);
        let hits = (0..n).filter(|_| jump_step(&toy, &s, dt, &mut rng).1).count() as f64;
        let p = 1.0 - (-0.25f64).exp();
        let sigma = (p * (1.0 - p) / n as f64).sqrt();
        assert!((hits / n as f64 - p).abs() < 3.0 * sigma);
        let mut quiet = ToyModel::quiet(band);
        quiet.rate = 0.0;
        assert!(!(0..1000).any(|_| jump_step(&quiet, &s, dt, &mut rng).1));
    }

    #[test]
    fn post_jump_mean_is_reset_mean() {
        let pend = Pendulum::new(PendulumParams::default(), true).unwrap();
        let r = so3::rot_y(pend.theta0() + 0.2);
        let s = HybridState::new(r, [0.0, 6.0], 0);
        assert_eq!(pend.rate(0, &r, s.omega), 100.0);
        let mean = pend.reset_mean(&r, s.omega);
        let mut rng = sample_rng(5, 0);
        let n = 40_000;
        let mut acc = [0.0; 2];
        let mut count = 0;
        while count < n {
            let (out, jumped) = jump_step(&pend, &s, 0.005, &mut rng);
            if jumped {
                acc[0] += out.omega[0];
                acc[1] += out.omega[1];
                count += 1;
            }
        }
        let bound = 3.0 * 0.05 / (n as f64).sqrt();
        assert!((acc[0] / n as f64 - mean[0]).abs() < bound);
        assert!((acc[1] / n as f64 - mean[1]).abs() < bound);
    }

    #[test]
    fn ensemble_is_seed_deterministic_and_thread_independent() {
        let pend = Pendulum::new(PendulumParams::default(), true).unwrap();
        let c = McConfig {
            snapshot_stride: 10,
            window: 14.5,
            ..cfg(1500, 0.005, 0.3)
        };
        let a = run_ensemble(&pend, &c).unwrap();
        let b = rayon::ThreadPoolBuilder::new()
            .num_threads(3)
            .build()
            .unwrap()
            .install(|| run_ensemble(&pend, &c).unwrap());
        assert_eq!(a, b);
        assert_eq!(a.summaries.len(), 7);
        assert_eq!(a.window_violations, 0);
        assert!(a.jumps > 0);
        let other = run_ensemble(&pend, &McConfig { seed: 8, ..c }).unwrap();
        assert_ne!(a.summaries, other.summaries);
    }

    #[test]
    fn snapshot_steps_include_last() {
        let c = McConfig {
            snapshot_stride: 3,
            ..cfg(1, 0.005, 0.035)
        };
        assert_eq!(c.snapshot_steps(), vec![0, 3, 6, 7]);
        assert!(McConfig { n_samples: 0, ..c }.validate().is_err());
        assert!(McConfig { substeps: 0, ..c }.validate().is_err());
    }

    #[test]
    fn free_swing_decays() {
        // without collisions the mean b3 swings about e2 with decaying amplitude
        let pend = Pendulum::new(PendulumParams::default(), false).unwrap();
        let c = McConfig {
            snapshot_stride: 4,
            window: 14.5,
            ..cfg(400, 0.005, 3.0)
        };
        let res = run_ensemble(&pend, &c).unwrap();
        let x: Vec<f64> = res.summaries.iter().map(|m| m.mean_b3.x).collect();
        assert!(x[0] < -0.8);
        let max_late = x[x.len() / 2..].iter().copied().fold(f64::MIN, f64::max);
        let max_early = x[..x.len() / 2].iter().copied().fold(f64::MIN, f64::max);
        assert!(max_early > 0.5, "first swing reaches the far side: {max_early}");
        assert!(max_late < max_early);
    }
}
