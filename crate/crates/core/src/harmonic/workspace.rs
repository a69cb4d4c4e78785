use std::fmt;
use std::sync::Arc;

use rustfft::{Fft, FftPlanner};

use super::{
    lie_algebra_so3, rep_dim, BandLimit, DenseMatrix, GridDensity, So3Grid, SpectralCoeffs,
    SpectralDensity, TorusGrid, WignerTable, C64,
};
use crate::error::{Error, Result};

/// Default ceiling on grid points per mode (about 0.5 GB per real grid).
pub const DEFAULT_MAX_GRID_POINTS: usize = 1 << 26;

const ZERO: C64 = C64 { re: 0.0, im: 0.0 };

/// One `(m2, m1)` pair of the beta contraction: the Wigner column
/// `d^l_{a,c}` feeds coefficient entry `F^l_{c,a}` for every `l >= l_min`.
#[derive(Debug, Clone, Copy)]
struct Pair {
    a: i64,
    c: i64,
    l_min: usize,
    /// Start of this pair in the pair-major coefficient layout `[pair][l][k]`.
    offset: usize,
    /// Start of this pair's weight rows in `[pair][l][nu2]`.
    weight_offset: usize,
}

/// Precomputed tables for a fixed band limit. Immutable after construction
/// and safe to share across threads.
pub struct HarmonicWorkspace {
    band: BandLimit,
    so3: So3Grid,
    torus: TorusGrid,
    wigner: WignerTable,
    generators: Vec<[DenseMatrix; 3]>,
    /// `exp(-i m alpha_nu)` stored `[nu][m + l0 - 1]`; gamma uses the same nodes.
    angle_phase: Vec<C64>,
    /// `exp(i pi n Omega_j / L)` stored `[j][n + n0]`.
    torus_phase: Vec<C64>,
    pairs: Vec<Pair>,
    /// `w_nu2 d^l_{a,c}(beta_nu2)`.
    analysis_weights: Vec<f64>,
    /// `d(l) d^l_{a,c}(beta_nu2)`.
    synthesis_weights: Vec<f64>,
    /// FFT bin of signed torus index `k = (n1 + n0) M + (n2 + n0)`.
    torus_bin: Vec<usize>,
    /// `(-1)^(n1 + n2)` for signed torus index `k`.
    torus_sign: Vec<f64>,
    angle_forward: Arc<dyn Fft<f64>>,
    angle_inverse: Arc<dyn Fft<f64>>,
    torus_forward: Arc<dyn Fft<f64>>,
    torus_inverse: Arc<dyn Fft<f64>>,
}

impl fmt::Debug for HarmonicWorkspace {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("HarmonicWorkspace")
            .field("band", &self.band)
            .finish_non_exhaustive()
    }
}

impl HarmonicWorkspace {
    pub fn build(band: BandLimit) -> Result<Self> {
        Self::with_memory_ceiling(band, DEFAULT_MAX_GRID_POINTS)
    }

    pub fn with_memory_ceiling(band: BandLimit, max_grid_points: usize) -> Result<Self> {
        let points = band.attitude_len().saturating_mul(band.torus_len());
        if points > max_grid_points {
            return Err(Error::MemoryCeiling {
                l0: band.l0(),
                n0: band.n0(),
                points,
                ceiling: max_grid_points,
            });
        }
        let l0 = band.l0();
        let n0 = band.n0();
        let n = band.so3_points();
        let m = band.torus_points();
        let so3 = band.so3_grid();
        let torus = band.torus_grid();
        let wigner = WignerTable::new(&so3, l0);
        let generators = (0..l0).map(lie_algebra_so3).collect();

        let span = 2 * l0 - 1;
        let mut angle_phase = Vec::with_capacity(n * span);
        for &alpha in &so3.alpha {
            for mi in 0..span {
                let mm = mi as f64 - (l0 as f64 - 1.0);
                angle_phase.push(C64::from_polar(1.0, -mm * alpha));
            }
        }
        let mut torus_phase = Vec::with_capacity(m * m);
        for &om in &torus.omega {
            for ni in 0..m {
                let nn = ni as f64 - n0 as f64;
                torus_phase.push(C64::from_polar(
                    1.0,
                    std::f64::consts::PI * nn * om / band.half_width(),
                ));
            }
        }

        let k_len = m * m;
        let mut pairs = Vec::with_capacity(span * span);
        let mut analysis_weights = Vec::new();
        let mut synthesis_weights = Vec::new();
        let mut offset = 0;
        let lm = l0 as i64 - 1;
        for a in -lm..=lm {
            for c in -lm..=lm {
                let l_min = a.unsigned_abs().max(c.unsigned_abs()) as usize;
                pairs.push(Pair {
                    a,
                    c,
                    l_min,
                    offset,
                    weight_offset: analysis_weights.len(),
                });
                offset += (l0 - l_min) * k_len;
                for l in l_min..l0 {
                    let col = wigner.column(l, a, c);
                    let dl = rep_dim(l) as f64;
                    for (v, &d) in col.iter().enumerate() {
                        analysis_weights.push(so3.weights[v] * d);
                        synthesis_weights.push(dl * d);
                    }
                }
            }
        }
        debug_assert_eq!(offset, band.coeff_len());

        let mut torus_bin = Vec::with_capacity(k_len);
        let mut torus_sign = Vec::with_capacity(k_len);
        let mi = m as i64;
        for k1 in 0..mi {
            for k2 in 0..mi {
                let n1 = k1 - n0 as i64;
                let n2 = k2 - n0 as i64;
                let b1 = n1.rem_euclid(mi) as usize;
                let b2 = n2.rem_euclid(mi) as usize;
                torus_bin.push(b1 * m + b2);
                torus_sign.push(if (n1 + n2).rem_euclid(2) == 0 { 1.0 } else { -1.0 });
            }
        }

        let mut planner = FftPlanner::new();
        Ok(Self {
            band,
            so3,
            torus,
            wigner,
            generators,
            angle_phase,
            torus_phase,
            pairs,
            analysis_weights,
            synthesis_weights,
            torus_bin,
            torus_sign,
            angle_forward: planner.plan_fft_forward(n),
            angle_inverse: planner.plan_fft_inverse(n),
            torus_forward: planner.plan_fft_forward(m),
            torus_inverse: planner.plan_fft_inverse(m),
        })
    }

    pub fn band(&self) -> BandLimit {
        self.band
    }

    pub fn so3_grid(&self) -> &So3Grid {
        &self.so3
    }

    pub fn torus_grid(&self) -> &TorusGrid {
        &self.torus
    }

    pub fn wigner(&self) -> &WignerTable {
        &self.wigner
    }

    /// `u^l(e_1), u^l(e_2), u^l(e_3)`.
    pub fn so3_generators(&self, l: usize) -> &[DenseMatrix; 3] {
        &self.generators[l]
    }

    /// `exp(-i m alpha_nu)` for `|m| < l0` (also valid for gamma nodes).
    pub fn angle_phase(&self, nu: usize, m: i64) -> C64 {
        let span = 2 * self.band.l0() - 1;
        self.angle_phase[nu * span + (m + self.band.l0() as i64 - 1) as usize]
    }

    /// `exp(i pi n Omega_j / L)` for grid node `j` and `-n0 <= n < n0`.
    pub fn torus_phase(&self, j: usize, n: i64) -> C64 {
        let m = self.band.torus_points();
        self.torus_phase[j * m + (n + self.band.n0() as i64) as usize]
    }

    /// Quadrature `sum w_nu2 w'_mu f` of one mode's grid values (Lebesgue
    /// measure on the torus).
    pub fn integrate(&self, values: &[f64]) -> f64 {
        let n = self.band.so3_points();
        let k = self.band.torus_len();
        let mut total = 0.0;
        for (chunk_idx, chunk) in values.chunks(k).enumerate() {
            let nu2 = (chunk_idx / n) % n;
            total += self.so3.weights[nu2] * pairwise_sum(chunk);
        }
        total * self.torus.lebesgue_weight
    }

    fn check_grid_len(&self, len: usize) -> Result<()> {
        if len != self.band.grid_len() {
            return Err(Error::DimensionMismatch {
                expected: self.band.grid_len(),
                actual: len,
            });
        }
        Ok(())
    }

    fn check_coeffs(&self, f: &SpectralCoeffs) -> Result<()> {
        if f.band() != self.band {
            return Err(Error::DimensionMismatch {
                expected: self.band.coeff_len(),
                actual: f.as_slice().len(),
            });
        }
        Ok(())
    }

    /// Forward transform of complex grid values `[nu1][nu2][nu3][mu1][mu2]`.
    pub fn forward_transform(&self, f: &[C64]) -> Result<SpectralCoeffs> {
        self.check_grid_len(f.len())?;
        Ok(self.forward_impl(|dst, start| dst.copy_from_slice(&f[start..start + dst.len()])))
    }

    /// Forward transform of real grid values.
    pub fn forward_real(&self, f: &[f64]) -> Result<SpectralCoeffs> {
        self.check_grid_len(f.len())?;
        Ok(self.forward_impl(|dst, start| {
            let len = dst.len();
            dst.iter_mut()
                .zip(&f[start..start + len])
                .for_each(|(d, &s)| *d = C64::new(s, 0.0))
        }))
    }

    fn forward_impl(&self, load: impl Fn(&mut [C64], usize)) -> SpectralCoeffs {
        let n = self.band.so3_points();
        let k_len = self.band.torus_len();
        let m = self.band.torus_points();
        let row = n * k_len;
        let mut scratch = Scratch::new(self);
        let mut slab = vec![ZERO; n * row];
        let mut acc = vec![ZERO; self.band.coeff_len()];
        let norm = 1.0 / k_len as f64;
        for nu2 in 0..n {
            for nu1 in 0..n {
                load(&mut slab[nu1 * row..(nu1 + 1) * row], (nu1 * n + nu2) * row);
            }
            // torus axes, then reorder bins into signed order with (-1)^n / M^2
            fft_axis(&mut slab, n * n * m, m, 1, &*self.torus_forward, &mut scratch);
            fft_axis(&mut slab, n * n, m, m, &*self.torus_forward, &mut scratch);
            for chunk in slab.chunks_mut(k_len) {
                scratch.line[..k_len].copy_from_slice(chunk);
                for (k, out) in chunk.iter_mut().enumerate() {
                    *out = scratch.line[self.torus_bin[k]] * (self.torus_sign[k] * norm);
                }
            }
            // gamma then alpha, both with exp(+i m angle)
            fft_axis(&mut slab, n, n, k_len, &*self.angle_inverse, &mut scratch);
            fft_axis(&mut slab, 1, n, n * k_len, &*self.angle_inverse, &mut scratch);
            self.analysis_accumulate(nu2, &mut acc, |a, c| {
                let start = (angle_bin(a, n) * n + angle_bin(c, n)) * k_len;
                &slab[start..start + k_len]
            });
        }
        self.scatter(&acc)
    }

    /// `acc[pair][l][k] += w_nu2 d^l_{a,c}(beta_nu2) row(a, c)[k]`.
    fn analysis_accumulate<'s>(
        &self,
        nu2: usize,
        acc: &mut [C64],
        row: impl Fn(i64, i64) -> &'s [C64],
    ) {
        let n = self.band.so3_points();
        let k_len = self.band.torus_len();
        let l0 = self.band.l0();
        for p in &self.pairs {
            let src = row(p.a, p.c);
            for l in p.l_min..l0 {
                let li = l - p.l_min;
                let w = self.analysis_weights[p.weight_offset + li * n + nu2];
                let dst = &mut acc[p.offset + li * k_len..p.offset + (li + 1) * k_len];
                dst.iter_mut().zip(src).for_each(|(d, s)| *d += s * w);
            }
        }
    }

    /// `row(a, c)[k] = sum_l d(l) d^l_{a,c}(beta_nu2) coeffs[pair][l][k]`.
    fn synthesis_row(&self, nu2: usize, p: &Pair, gathered: &[C64], out: &mut [C64]) {
        let n = self.band.so3_points();
        let k_len = self.band.torus_len();
        out.iter_mut().for_each(|z| *z = ZERO);
        for l in p.l_min..self.band.l0() {
            let li = l - p.l_min;
            let w = self.synthesis_weights[p.weight_offset + li * n + nu2];
            let src = &gathered[p.offset + li * k_len..p.offset + (li + 1) * k_len];
            out.iter_mut().zip(src).for_each(|(d, s)| *d += s * w);
        }
    }

    /// Reorders coefficients into the pair-major layout used by the
    /// beta contraction.
    fn gather(&self, f: &SpectralCoeffs) -> Vec<C64> {
        let k_len = self.band.torus_len();
        let mut out = vec![ZERO; self.band.coeff_len()];
        let data = f.as_slice();
        for p in &self.pairs {
            for l in p.l_min..self.band.l0() {
                let d = rep_dim(l);
                let li = l as i64;
                let base = super::block_offset(l, self.band.n0(), self.band.l0())
                    + (p.c + li) as usize * d
                    + (p.a + li) as usize;
                let dst = &mut out[p.offset + (l - p.l_min) * k_len..][..k_len];
                for (k, z) in dst.iter_mut().enumerate() {
                    *z = data[base + k * d * d];
                }
            }
        }
        out
    }

    fn scatter(&self, acc: &[C64]) -> SpectralCoeffs {
        let k_len = self.band.torus_len();
        let mut out = SpectralCoeffs::zeros(self.band);
        let data = out.as_mut_slice();
        for p in &self.pairs {
            for l in p.l_min..self.band.l0() {
                let d = rep_dim(l);
                let li = l as i64;
                let base = super::block_offset(l, self.band.n0(), self.band.l0())
                    + (p.c + li) as usize * d
                    + (p.a + li) as usize;
                let src = &acc[p.offset + (l - p.l_min) * k_len..][..k_len];
                for (k, z) in src.iter().enumerate() {
                    data[base + k * d * d] = *z;
                }
            }
        }
        out
    }

    /// Band-limited synthesis `f = sum d(l) tr(F U^l) V^n` on the grid.
    pub fn inverse_transform(&self, f: &SpectralCoeffs) -> Result<Vec<C64>> {
        self.check_coeffs(f)?;
        let mut out = vec![ZERO; self.band.grid_len()];
        self.inverse_impl(f, |slab_row, start| {
            out[start..start + slab_row.len()].copy_from_slice(slab_row)
        });
        Ok(out)
    }

    /// Real part of [`Self::inverse_transform`].
    pub fn inverse_real(&self, f: &SpectralCoeffs) -> Result<Vec<f64>> {
        self.check_coeffs(f)?;
        let mut out = vec![0.0; self.band.grid_len()];
        self.inverse_impl(f, |slab_row, start| {
            out[start..start + slab_row.len()]
                .iter_mut()
                .zip(slab_row)
                .for_each(|(o, z)| *o = z.re)
        });
        Ok(out)
    }

    fn inverse_impl(&self, f: &SpectralCoeffs, mut store: impl FnMut(&[C64], usize)) {
        let n = self.band.so3_points();
        let k_len = self.band.torus_len();
        let m = self.band.torus_points();
        let row = n * k_len;
        let gathered = self.gather(f);
        let mut scratch = Scratch::new(self);
        let mut slab = vec![ZERO; n * row];
        let mut line = vec![ZERO; k_len];
        for nu2 in 0..n {
            slab.iter_mut().for_each(|z| *z = ZERO);
            for p in &self.pairs {
                self.synthesis_row(nu2, p, &gathered, &mut line);
                let start = (angle_bin(p.a, n) * n + angle_bin(p.c, n)) * k_len;
                slab[start..start + k_len].copy_from_slice(&line);
            }
            // exp(-i m angle) on both Euler axes
            fft_axis(&mut slab, 1, n, n * k_len, &*self.angle_forward, &mut scratch);
            fft_axis(&mut slab, n, n, k_len, &*self.angle_forward, &mut scratch);
            for chunk in slab.chunks_mut(k_len) {
                scratch.line[..k_len].iter_mut().for_each(|z| *z = ZERO);
                for (k, z) in chunk.iter().enumerate() {
                    scratch.line[self.torus_bin[k]] = z * self.torus_sign[k];
                }
                chunk.copy_from_slice(&scratch.line[..k_len]);
            }
            fft_axis(&mut slab, n * n, m, m, &*self.torus_inverse, &mut scratch);
            fft_axis(&mut slab, n * n * m, m, 1, &*self.torus_inverse, &mut scratch);
            for nu1 in 0..n {
                store(&slab[nu1 * row..(nu1 + 1) * row], (nu1 * n + nu2) * row);
            }
        }
    }

    pub fn forward_density(&self, p: &GridDensity) -> Result<SpectralDensity> {
        if p.band() != self.band {
            return Err(Error::DimensionMismatch {
                expected: self.band.grid_len(),
                actual: p.mode(0).len(),
            });
        }
        let modes = (0..p.n_modes())
            .map(|s| self.forward_real(p.mode(s)))
            .collect::<Result<Vec<_>>>()?;
        Ok(SpectralDensity { modes })
    }

    /// Inverse transform keeping the real part, as a density.
    pub fn inverse_density(&self, f: &SpectralDensity) -> Result<GridDensity> {
        let mut data = Vec::with_capacity(self.band.grid_len() * f.n_modes());
        for mode in &f.modes {
            data.extend(self.inverse_real(mode)?);
        }
        GridDensity::from_vec(self.band, f.n_modes(), data)
    }

    /// Coefficients of `r_i(beta, gamma) * f` for each field `r_i`, given on
    /// the `[nu2][nu3]` grid. Identical to multiplying on the full grid and
    /// transforming back: the alpha and torus transforms cancel, and the
    /// product in gamma is the circular convolution of the gamma spectra,
    /// which is sparse for fields with few gamma harmonics.
    pub fn multiply_attitude_fields(
        &self,
        f: &SpectralCoeffs,
        fields: &[&[f64]],
    ) -> Result<Vec<SpectralCoeffs>> {
        self.check_coeffs(f)?;
        let n = self.band.so3_points();
        for r in fields {
            if r.len() != n * n {
                return Err(Error::DimensionMismatch {
                    expected: n * n,
                    actual: r.len(),
                });
            }
        }
        let k_len = self.band.torus_len();
        let spectra: Vec<Vec<Vec<(usize, C64)>>> =
            fields.iter().map(|r| self.gamma_spectrum(r)).collect();
        let gathered = self.gather(f);
        let span = 2 * self.band.l0() - 1;
        let lm = self.band.l0() as i64 - 1;
        let mut accs = vec![vec![ZERO; self.band.coeff_len()]; fields.len()];
        // synthesized rows for one beta node, [a][c bin][k]
        let mut rows = vec![ZERO; span * n * k_len];
        let mut line = vec![ZERO; k_len];
        for nu2 in 0..n {
            rows.iter_mut().for_each(|z| *z = ZERO);
            for p in &self.pairs {
                let start = (((p.a + lm) as usize) * n + angle_bin(p.c, n)) * k_len;
                self.synthesis_row(nu2, p, &gathered, &mut rows[start..start + k_len]);
            }
            for (spectrum, acc) in spectra.iter().zip(accs.iter_mut()) {
                let terms = &spectrum[nu2];
                if terms.is_empty() {
                    continue;
                }
                for p in &self.pairs {
                    let ai = (p.a + lm) as usize;
                    let cb = angle_bin(p.c, n);
                    line.iter_mut().for_each(|z| *z = ZERO);
                    for &(q, rho) in terms {
                        let src_bin = (cb + n - q) % n;
                        let start = (ai * n + src_bin) * k_len;
                        let src = &rows[start..start + k_len];
                        line.iter_mut().zip(src).for_each(|(o, s)| *o += s * rho);
                    }
                    for l in p.l_min..self.band.l0() {
                        let li = l - p.l_min;
                        let w = self.analysis_weights[p.weight_offset + li * n + nu2];
                        let dst = &mut acc[p.offset + li * k_len..p.offset + (li + 1) * k_len];
                        dst.iter_mut().zip(&line).for_each(|(d, s)| *d += s * w);
                    }
                }
            }
        }
        Ok(accs.iter().map(|acc| self.scatter(acc)).collect())
    }

    /// Per beta node, the nonzero terms `(q, N sum_nu3 exp(i q gamma) r)`,
    /// where the leading `N` accounts for the alpha sum.
    fn gamma_spectrum(&self, r: &[f64]) -> Vec<Vec<(usize, C64)>> {
        let n = self.band.so3_points();
        let scale = r.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        let tol = 1e-14 * scale.max(f64::MIN_POSITIVE) * n as f64;
        (0..n)
            .map(|nu2| {
                let row = &r[nu2 * n..(nu2 + 1) * n];
                (0..n)
                    .filter_map(|q| {
                        let mut s = ZERO;
                        for (nu3, &x) in row.iter().enumerate() {
                            s += self.angle_phase_bin(nu3, q).conj() * x;
                        }
                        (s.norm() > tol).then_some((q, s * n as f64))
                    })
                    .collect()
            })
            .collect()
    }

    /// `exp(-i q gamma_nu3)` for a frequency bin `q` in `0..N`.
    fn angle_phase_bin(&self, nu3: usize, q: usize) -> C64 {
        let n = self.band.so3_points();
        C64::from_polar(1.0, -2.0 * std::f64::consts::PI * ((q * nu3) % n) as f64 / n as f64)
    }
}

#[inline]
fn angle_bin(m: i64, n: usize) -> usize {
    m.rem_euclid(n as i64) as usize
}

struct Scratch {
    line: Vec<C64>,
    transpose: Vec<C64>,
    fft: Vec<C64>,
}

impl Scratch {
    fn new(ws: &HarmonicWorkspace) -> Self {
        let fft_len = [
            &ws.angle_forward,
            &ws.angle_inverse,
            &ws.torus_forward,
            &ws.torus_inverse,
        ]
        .iter()
        .map(|p| p.get_inplace_scratch_len())
        .max()
        .unwrap_or(0);
        Self {
            line: vec![ZERO; ws.band.torus_len().max(ws.band.so3_points())],
            transpose: Vec::new(),
            fft: vec![ZERO; fft_len],
        }
    }
}

/// In-place DFT along the middle axis of a `[outer][len][inner]` array.
fn fft_axis(
    data: &mut [C64],
    outer: usize,
    len: usize,
    inner: usize,
    plan: &dyn Fft<f64>,
    scratch: &mut Scratch,
) {
    debug_assert_eq!(data.len(), outer * len * inner);
    if inner == 1 {
        plan.process_with_scratch(data, &mut scratch.fft);
        return;
    }
    let block = len * inner;
    if scratch.transpose.len() < block {
        scratch.transpose.resize(block, ZERO);
    }
    let t = &mut scratch.transpose[..block];
    for chunk in data.chunks_mut(block) {
        transpose(chunk, t, len, inner);
        plan.process_with_scratch(t, &mut scratch.fft);
        transpose(t, chunk, inner, len);
    }
}

/// Cache-blocked out-of-place transpose of a row-major `rows x cols` matrix.
fn transpose(src: &[C64], dst: &mut [C64], rows: usize, cols: usize) {
    const TILE: usize = 16;
    for r0 in (0..rows).step_by(TILE) {
        let r1 = (r0 + TILE).min(rows);
        for c0 in (0..cols).step_by(TILE) {
            let c1 = (c0 + TILE).min(cols);
            for r in r0..r1 {
                for c in c0..c1 {
                    dst[c * rows + r] = src[r * cols + c];
                }
            }
        }
    }
}

/// Pairwise summation for reproducible, accurate reductions.
pub(crate) fn pairwise_sum(x: &[f64]) -> f64 {
    if x.len() <= 32 {
        return x.iter().sum();
    }
    let mid = x.len() / 2;
    pairwise_sum(&x[..mid]) + pairwise_sum(&x[mid..])
}
