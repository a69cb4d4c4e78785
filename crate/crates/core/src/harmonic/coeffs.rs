use super::{block_offset, rep_dim, BandLimit, HarmonicWorkspace, C64};
use crate::error::{Error, Result};

/// Fourier coefficients of one function on SO(3) x T^2.
///
/// Layout: ragged `l`-major blocks; inside block `l`, the torus index
/// `(n1 + n0, n2 + n0)` in row-major order, then a row-major `d(l) x d(l)`
/// matrix with rows `m1 = -l..=l`.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralCoeffs {
    band: BandLimit,
    data: Vec<C64>,
}

impl SpectralCoeffs {
    pub fn zeros(band: BandLimit) -> Self {
        Self {
            band,
            data: vec![C64::new(0.0, 0.0); band.coeff_len()],
        }
    }

    pub fn from_vec(band: BandLimit, data: Vec<C64>) -> Result<Self> {
        if data.len() != band.coeff_len() {
            return Err(Error::DimensionMismatch {
                expected: band.coeff_len(),
                actual: data.len(),
            });
        }
        Ok(Self { band, data })
    }

    pub fn band(&self) -> BandLimit {
        self.band
    }

    pub fn as_slice(&self) -> &[C64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [C64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<C64> {
        self.data
    }

    /// Flat index of `F^{l,(n1,n2)}_{m1,m2}`.
    pub fn index(&self, l: usize, n: [i64; 2], m1: i64, m2: i64) -> usize {
        let n0 = self.band.n0() as i64;
        let m = 2 * n0;
        debug_assert!(l < self.band.l0());
        debug_assert!((-n0..n0).contains(&n[0]) && (-n0..n0).contains(&n[1]));
        let d = rep_dim(l);
        let li = l as i64;
        let k = ((n[0] + n0) * m + (n[1] + n0)) as usize;
        block_offset(l, self.band.n0(), self.band.l0())
            + k * d * d
            + (m1 + li) as usize * d
            + (m2 + li) as usize
    }

    pub fn get(&self, l: usize, n: [i64; 2], m1: i64, m2: i64) -> C64 {
        self.data[self.index(l, n, m1, m2)]
    }

    pub fn set(&mut self, l: usize, n: [i64; 2], m1: i64, m2: i64, value: C64) {
        let i = self.index(l, n, m1, m2);
        self.data[i] = value;
    }

    /// All `(2 n0)^2` blocks of degree `l`, contiguous.
    pub fn degree(&self, l: usize) -> &[C64] {
        let start = block_offset(l, self.band.n0(), self.band.l0());
        let end = block_offset(l + 1, self.band.n0(), self.band.l0());
        &self.data[start..end]
    }

    pub fn degree_mut(&mut self, l: usize) -> &mut [C64] {
        let start = block_offset(l, self.band.n0(), self.band.l0());
        let end = block_offset(l + 1, self.band.n0(), self.band.l0());
        &mut self.data[start..end]
    }

    /// The `d(l) x d(l)` block for torus index `n`.
    pub fn block(&self, l: usize, n: [i64; 2]) -> &[C64] {
        let d = rep_dim(l);
        let i = self.index(l, n, -(l as i64), -(l as i64));
        &self.data[i..i + d * d]
    }

    /// `F^{0,(0,0)}_{0,0}`, the Haar-normalized integral of the function.
    pub fn constant_term(&self) -> C64 {
        self.get(0, [0, 0], 0, 0)
    }

    /// `self += a * other`.
    pub fn add_scaled(&mut self, a: f64, other: &Self) {
        debug_assert_eq!(self.band, other.band);
        self.data
            .iter_mut()
            .zip(&other.data)
            .for_each(|(x, y)| *x += y * a);
    }

    pub fn scale(&mut self, a: f64) {
        self.data.iter_mut().for_each(|x| *x *= a);
    }

    /// Plain Euclidean norm of the coefficient vector.
    pub fn norm(&self) -> f64 {
        self.data.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
    }

    /// Parseval sum `sum_l d(l) ||F^{l,n}||_F^2`.
    pub fn energy(&self) -> f64 {
        (0..self.band.l0())
            .map(|l| rep_dim(l) as f64 * self.degree(l).iter().map(|z| z.norm_sqr()).sum::<f64>())
            .sum()
    }

    /// Fraction of the Parseval energy carried by the top 20% of the band
    /// (`l >= 0.8 l0` or `max |n_j| >= 0.8 n0`).
    pub fn high_band_fraction(&self) -> f64 {
        let l0 = self.band.l0();
        let n0 = self.band.n0() as i64;
        let m = 2 * n0;
        let l_cut = 0.8 * l0 as f64;
        let n_cut = 0.8 * n0 as f64;
        let mut total = 0.0;
        let mut high = 0.0;
        for l in 0..l0 {
            let d2 = rep_dim(l) * rep_dim(l);
            let w = rep_dim(l) as f64;
            for (k, block) in self.degree(l).chunks(d2).enumerate() {
                let n1 = k as i64 / m - n0;
                let n2 = k as i64 % m - n0;
                let e: f64 = w * block.iter().map(|z| z.norm_sqr()).sum::<f64>();
                total += e;
                if l as f64 >= l_cut || n1.abs().max(n2.abs()) as f64 >= n_cut {
                    high += e;
                }
            }
        }
        if total > 0.0 {
            high / total
        } else {
            0.0
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|z| z.re.is_finite() && z.im.is_finite())
    }
}

/// Coefficients of a density, one [`SpectralCoeffs`] per discrete mode.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralDensity {
    pub modes: Vec<SpectralCoeffs>,
}

impl SpectralDensity {
    pub fn zeros(band: BandLimit, n_modes: usize) -> Self {
        Self {
            modes: vec![SpectralCoeffs::zeros(band); n_modes],
        }
    }

    pub fn band(&self) -> BandLimit {
        self.modes[0].band()
    }

    pub fn n_modes(&self) -> usize {
        self.modes.len()
    }

    /// Total probability `(2L)^2 sum_s Re F_s^{0,(0,0)}_{0,0}`, consistent with
    /// Lebesgue measure on the torus.
    pub fn total_probability(&self) -> f64 {
        let l = self.band().half_width();
        4.0 * l * l * self.modes.iter().map(|m| m.constant_term().re).sum::<f64>()
    }

    pub fn add_scaled(&mut self, a: f64, other: &Self) {
        for (x, y) in self.modes.iter_mut().zip(&other.modes) {
            x.add_scaled(a, y);
        }
    }

    pub fn high_band_fraction(&self) -> f64 {
        let mut num = 0.0;
        let mut den = 0.0;
        for m in &self.modes {
            let e = m.energy();
            num += e * m.high_band_fraction();
            den += e;
        }
        if den > 0.0 {
            num / den
        } else {
            0.0
        }
    }

    pub fn is_finite(&self) -> bool {
        self.modes.iter().all(SpectralCoeffs::is_finite)
    }
}

/// Real density values on the product grid, stored
/// `[s][nu1][nu2][nu3][mu1][mu2]`.
#[derive(Debug, Clone, PartialEq)]
pub struct GridDensity {
    band: BandLimit,
    n_modes: usize,
    data: Vec<f64>,
}

impl GridDensity {
    pub fn zeros(band: BandLimit, n_modes: usize) -> Self {
        Self {
            band,
            n_modes,
            data: vec![0.0; band.grid_len() * n_modes],
        }
    }

    pub fn from_vec(band: BandLimit, n_modes: usize, data: Vec<f64>) -> Result<Self> {
        let expected = band.grid_len() * n_modes;
        if data.len() != expected || n_modes == 0 {
            return Err(Error::DimensionMismatch {
                expected,
                actual: data.len(),
            });
        }
        Ok(Self {
            band,
            n_modes,
            data,
        })
    }

    pub fn band(&self) -> BandLimit {
        self.band
    }

    pub fn n_modes(&self) -> usize {
        self.n_modes
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn mode(&self, s: usize) -> &[f64] {
        let n = self.band.grid_len();
        &self.data[s * n..(s + 1) * n]
    }

    pub fn mode_mut(&mut self, s: usize) -> &mut [f64] {
        let n = self.band.grid_len();
        &mut self.data[s * n..(s + 1) * n]
    }

    /// Flat index of `p[s][nu1][nu2][nu3][mu1][mu2]` (torus indices `0..2 n0`).
    pub fn index(&self, s: usize, nu: [usize; 3], mu: [usize; 2]) -> usize {
        let n = self.band.so3_points();
        let m = self.band.torus_points();
        (((((s * n + nu[0]) * n + nu[1]) * n + nu[2]) * m + mu[0]) * m) + mu[1]
    }

    /// `sum_s sum w_nu2 w'_mu p`.
    pub fn total_probability(&self, ws: &HarmonicWorkspace) -> f64 {
        (0..self.n_modes).map(|s| ws.integrate(self.mode(s))).sum()
    }

    pub fn min(&self) -> f64 {
        self.data.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.data.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Index of the first non-finite value, if any.
    pub fn first_non_finite(&self) -> Option<usize> {
        self.data.iter().position(|x| !x.is_finite())
    }

    pub fn scale(&mut self, a: f64) {
        self.data.iter_mut().for_each(|x| *x *= a);
    }
}
