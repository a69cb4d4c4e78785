//! Collocation of the jump part of the Fokker-Planck equation.
//!
//! At each grid state the density loses mass at the jump rate and gains
//! the mass redistributed by the reset kernel. With the kernel columns
//! renormalized on the grid, the gain of every source column sums to its
//! rate, so a forward Euler step conserves the total exactly.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::harmonic::{GridDensity, HarmonicWorkspace};
use crate::model::{grid_omega, grid_rotation, log_sum_exp, GshsModel, HybridState, KernelKind};

/// Kernel entries below this fraction of the column maximum are dropped.
pub const KERNEL_TRUNCATION: f64 = 1e-14;

/// Largest number of grid states (all modes) accepted by the dense path
/// for attitude-changing kernels.
pub const GENERAL_KERNEL_MAX_STATES: usize = 20_000;

/// Sparse source columns of one attitude (or of the whole grid for
/// attitude-changing kernels).
#[derive(Debug, Clone, Default, PartialEq)]
struct Block {
    attitude: usize,
    /// Source index: `mode * torus_len + torus index` inside a block, or a
    /// flat grid index for the global block.
    src: Vec<u32>,
    rate: Vec<f64>,
    /// Column `c` spans `ptr[c]..ptr[c + 1]` of `dst` and `weight`.
    ptr: Vec<u32>,
    dst: Vec<u32>,
    /// Normalized redistribution weights; each column sums to one.
    weight: Vec<f64>,
}

impl Block {
    fn push_column(&mut self, src: usize, rate: f64, entries: impl Iterator<Item = (usize, f64)>) {
        if self.ptr.is_empty() {
            self.ptr.push(0);
        }
        self.src.push(src as u32);
        self.rate.push(rate);
        for (d, w) in entries {
            self.dst.push(d as u32);
            self.weight.push(w);
        }
        self.ptr.push(self.dst.len() as u32);
    }

    fn columns(&self) -> usize {
        self.src.len()
    }

    fn column(&self, c: usize) -> (&[u32], &[f64]) {
        let (a, b) = (self.ptr[c] as usize, self.ptr[c + 1] as usize);
        (&self.dst[a..b], &self.weight[a..b])
    }
}

/// Precomputed jump generator on the grid.
#[derive(Debug, Clone)]
pub struct JumpOperator {
    n_modes: usize,
    grid_len: usize,
    torus_len: usize,
    max_rate: f64,
    kernel_defect: Option<f64>,
    blocks: Vec<Block>,
    general: Option<Block>,
}

impl JumpOperator {
    pub fn build(model: &dyn GshsModel, ws: &HarmonicWorkspace) -> Result<Self> {
        let band = ws.band();
        let mut op = Self {
            n_modes: model.n_modes(),
            grid_len: band.grid_len(),
            torus_len: band.torus_len(),
            max_rate: 0.0,
            kernel_defect: None,
            blocks: Vec::new(),
            general: None,
        };
        if !model.has_jumps() {
            return Ok(op);
        }
        match model.kernel_kind() {
            KernelKind::AttitudePreserving => op.build_attitude_preserving(model, ws)?,
            KernelKind::General => op.build_general(model, ws)?,
        }
        Ok(op)
    }

    fn build_attitude_preserving(&mut self, model: &dyn GshsModel, ws: &HarmonicWorkspace) -> Result<()> {
        let band = ws.band();
        let k_len = band.torus_len();
        let n_modes = model.n_modes();
        let targets: Vec<[f64; 2]> = (0..k_len).map(|k| grid_omega(ws, k)).collect();
        let w = ws.torus_grid().lebesgue_weight;
        let log_cut = KERNEL_TRUNCATION.ln();
        let built: Vec<Option<(Block, f64, f64)>> = (0..band.attitude_len())
            .into_par_iter()
            .map(|att| -> Result<Option<(Block, f64, f64)>> {
                let r = grid_rotation(ws, att);
                let mut block = Block {
                    attitude: att,
                    ..Block::default()
                };
                let mut max_rate = 0.0f64;
                let mut defect = 0.0f64;
                let mut logs = vec![vec![0.0; k_len]; n_modes];
                for s in 0..n_modes {
                    for (src, &om) in targets.iter().enumerate() {
                        let lam = model.rate(s, &r, om);
                        check_value("jump rate", lam, s, att, src)?;
                        if lam == 0.0 {
                            continue;
                        }
                        max_rate = max_rate.max(lam);
                        for (sp, col) in logs.iter_mut().enumerate() {
                            model.kernel_log_column(&r, om, s, sp, &targets, col);
                        }
                        let flat = logs.iter().flatten().copied();
                        let lse = log_sum_exp(flat.clone(), 1.0);
                        if lse.is_nan() || flat.clone().any(|v| v.is_nan() || v == f64::INFINITY) {
                            return Err(negative("reset kernel", f64::NAN, s, att, src));
                        }
                        if lse == f64::NEG_INFINITY {
                            return Err(Error::InvalidParameter(format!(
                                "reset kernel vanishes on the grid (mode {s}, attitude {att}, torus {src})"
                            )));
                        }
                        defect = defect.max(((lse + w.ln()).exp() - 1.0).abs());
                        let peak = flat.clone().fold(f64::NEG_INFINITY, f64::max);
                        let kept: Vec<(usize, f64)> = flat
                            .enumerate()
                            .filter(|&(_, v)| v - peak >= log_cut)
                            .collect();
                        let norm = log_sum_exp(kept.iter().map(|&(_, v)| v), 1.0);
                        block.push_column(
                            s * k_len + src,
                            lam,
                            kept.into_iter().map(|(i, v)| (i, (v - norm).exp())),
                        );
                    }
                }
                Ok((block.columns() > 0).then_some((block, max_rate, defect)))
            })
            .collect::<Result<Vec<_>>>()?;
        let mut defect = 0.0f64;
        for (block, rate, d) in built.into_iter().flatten() {
            self.max_rate = self.max_rate.max(rate);
            defect = defect.max(d);
            self.blocks.push(block);
        }
        if !self.blocks.is_empty() {
            self.kernel_defect = Some(defect);
        }
        Ok(())
    }

    /// Dense path for kernels that move the attitude. Quadratic in the grid
    /// size, so only small grids are accepted.
    fn build_general(&mut self, model: &dyn GshsModel, ws: &HarmonicWorkspace) -> Result<()> {
        let band = ws.band();
        let n_states = band.grid_len() * model.n_modes();
        if n_states > GENERAL_KERNEL_MAX_STATES {
            return Err(Error::Unsupported(format!(
                "attitude-changing reset kernels need a dense {n_states} x {n_states} operator; \
                 at most {GENERAL_KERNEL_MAX_STATES} states are supported"
            )));
        }
        let k_len = band.torus_len();
        let grid_len = band.grid_len();
        let n = band.so3_points();
        let w = ws.torus_grid().lebesgue_weight;
        let quad: Vec<f64> = (0..n_states)
            .map(|i| ws.so3_grid().weights[((i % grid_len) / k_len / n) % n] * w)
            .collect();
        let state = |i: usize| {
            let (s, rest) = (i / grid_len, i % grid_len);
            HybridState::new(grid_rotation(ws, rest / k_len), grid_omega(ws, rest % k_len), s)
        };
        let mut block = Block {
            attitude: usize::MAX,
            ..Block::default()
        };
        let mut defect = 0.0f64;
        for src in 0..n_states {
            let from = state(src);
            let lam = model.rate(from.mode, &from.r, from.omega);
            check_value("jump rate", lam, from.mode, (src % grid_len) / k_len, src % k_len)?;
            if lam == 0.0 {
                continue;
            }
            self.max_rate = self.max_rate.max(lam);
            let mut col = Vec::with_capacity(n_states);
            for dst in 0..n_states {
                let k = model.general_kernel_density(&from, &state(dst));
                if !(k >= 0.0) || !k.is_finite() {
                    return Err(negative("reset kernel", k, from.mode, (src % grid_len) / k_len, src % k_len));
                }
                col.push(quad[dst] * k);
            }
            let total: f64 = col.iter().sum();
            if total == 0.0 {
                return Err(Error::InvalidParameter(format!(
                    "reset kernel vanishes on the grid (flat source {src})"
                )));
            }
            defect = defect.max((total - 1.0).abs());
            let peak = col.iter().copied().fold(0.0, f64::max);
            let kept: Vec<(usize, f64)> = col
                .iter()
                .enumerate()
                .filter(|&(_, &v)| v >= KERNEL_TRUNCATION * peak)
                .map(|(i, &v)| (i, v))
                .collect();
            let norm: f64 = kept.iter().map(|&(_, v)| v).sum();
            // gain density at dst: quad[src] / quad[dst] * normalized weight
            block.push_column(
                src,
                lam,
                kept.into_iter().map(|(i, v)| (i, v / norm * quad[src] / quad[i])),
            );
        }
        if block.columns() > 0 {
            self.kernel_defect = Some(defect);
            self.general = Some(block);
        }
        Ok(())
    }

    pub fn max_rate(&self) -> f64 {
        self.max_rate
    }

    /// Attitude grid indices with at least one positive rate.
    pub fn active_attitudes(&self) -> Vec<usize> {
        self.blocks.iter().map(|b| b.attitude).collect()
    }

    pub fn is_inactive(&self) -> bool {
        self.blocks.is_empty() && self.general.is_none()
    }

    /// Largest deviation from one of a kernel column's grid sum before
    /// renormalization, or `None` without jumps.
    pub fn kernel_defect(&self) -> Option<f64> {
        self.kernel_defect
    }

    /// Number of stored kernel entries.
    pub fn nnz(&self) -> usize {
        self.blocks.iter().chain(self.general.iter()).map(|b| b.dst.len()).sum()
    }

    /// Column sums of the gain matrix, `(flat source index, sum)`.
    pub fn gain_column_sums(&self) -> Vec<(usize, f64)> {
        let mut out = Vec::new();
        let att_len = self.grid_len;
        for b in &self.blocks {
            for c in 0..b.columns() {
                let (_, w) = b.column(c);
                let src = b.src[c] as usize;
                let flat = (src / self.torus_len) * att_len + b.attitude * self.torus_len + src % self.torus_len;
                out.push((flat, b.rate[c] * w.iter().sum::<f64>()));
            }
        }
        out
    }

    /// Rate at every flat grid index (zero where no jump can occur).
    pub fn rates(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.grid_len * self.n_modes];
        for b in &self.blocks {
            for c in 0..b.columns() {
                out[self.flat(b, b.src[c] as usize)] = b.rate[c];
            }
        }
        if let Some(g) = &self.general {
            for c in 0..g.columns() {
                out[g.src[c] as usize] = g.rate[c];
            }
        }
        out
    }

    #[inline]
    fn flat(&self, b: &Block, local: usize) -> usize {
        (local / self.torus_len) * self.grid_len + b.attitude * self.torus_len + local % self.torus_len
    }

    /// One forward Euler step of length `dt`.
    pub fn step(&self, p: &GridDensity, dt: f64) -> Result<GridDensity> {
        let mut out = p.clone();
        self.step_into(p, dt, &mut out)?;
        Ok(out)
    }

    /// Forward Euler step writing into `out`, which must hold a copy of `p`.
    pub fn step_into(&self, p: &GridDensity, dt: f64, out: &mut GridDensity) -> Result<()> {
        let product = dt * self.max_rate;
        if product >= 1.0 {
            return Err(Error::JumpStepTooLarge {
                dt,
                max_rate: self.max_rate,
                product,
            });
        }
        if p.n_modes() != self.n_modes || p.as_slice().len() != self.grid_len * self.n_modes {
            return Err(Error::DimensionMismatch {
                expected: self.grid_len * self.n_modes,
                actual: p.as_slice().len(),
            });
        }
        let src = p.as_slice();
        let dst = out.as_mut_slice();
        for b in &self.blocks {
            for c in 0..b.columns() {
                let from = self.flat(b, b.src[c] as usize);
                let mass = dt * b.rate[c] * src[from];
                dst[from] -= mass;
                let (targets, weights) = b.column(c);
                for (&t, &w) in targets.iter().zip(weights) {
                    dst[self.flat(b, t as usize)] += mass * w;
                }
            }
        }
        if let Some(g) = &self.general {
            for c in 0..g.columns() {
                let from = g.src[c] as usize;
                let mass = dt * g.rate[c] * src[from];
                dst[from] -= mass;
                let (targets, weights) = g.column(c);
                for (&t, &w) in targets.iter().zip(weights) {
                    dst[t as usize] += mass * w;
                }
            }
        }
        Ok(())
    }
}

fn negative(what: &'static str, value: f64, s: usize, att: usize, k: usize) -> Error {
    Error::NegativeModelValue {
        what,
        value,
        location: format!("mode {s}, attitude {att}, torus {k}"),
    }
}

fn check_value(what: &'static str, v: f64, s: usize, att: usize, k: usize) -> Result<()> {
    if v < 0.0 || !v.is_finite() {
        return Err(negative(what, v, s, att, k));
    }
    Ok(())
}
