use nalgebra::DMatrix;
use std::f64::consts::PI;

use super::{apply_so3_generator, rep_dim, wigner_d, BandLimit, SpectralCoeffs, C64};
use crate::error::{Error, Result};

/// `U^l(alpha, beta, gamma)` with entries
/// `exp(-i m1 alpha) d^l_{m1,m2}(beta) exp(-i m2 gamma)`.
pub fn representation_matrix(l: usize, alpha: f64, beta: f64, gamma: f64) -> DMatrix<C64> {
    let d = wigner_d(l, beta).pop().expect("at least one degree");
    let li = l as i64;
    DMatrix::from_fn(rep_dim(l), rep_dim(l), |r, c| {
        let m1 = (r as i64 - li) as f64;
        let m2 = (c as i64 - li) as f64;
        C64::from_polar(d[(r, c)], -(m1 * alpha + m2 * gamma))
    })
}

/// Coefficients of the derivative along axis `j`: `u^l(e_j) F` for the
/// left-trivialized SO(3) axes 1..=3, `(i pi n_{j-3} / L) F` for the torus
/// axes 4 and 5.
pub fn spectral_derivative(f: &SpectralCoeffs, axis: usize) -> Result<SpectralCoeffs> {
    let mut out = SpectralCoeffs::zeros(f.band());
    accumulate_derivative(&mut out, f, axis, 1.0)?;
    Ok(out)
}

/// `out += scale * D_axis f`, see [`spectral_derivative`].
pub fn accumulate_derivative(
    out: &mut SpectralCoeffs,
    f: &SpectralCoeffs,
    axis: usize,
    scale: f64,
) -> Result<()> {
    if !(1..=5).contains(&axis) {
        return Err(Error::AxisOutOfRange(axis));
    }
    let band = f.band();
    let n0 = band.n0() as i64;
    let m = 2 * n0;
    let mut block_out = Vec::new();
    for l in 0..band.l0() {
        let d2 = rep_dim(l) * rep_dim(l);
        let src = f.degree(l);
        let dst = out.degree_mut(l);
        if axis <= 3 {
            block_out.resize(d2, C64::new(0.0, 0.0));
            for (s, o) in src.chunks(d2).zip(dst.chunks_mut(d2)) {
                apply_so3_generator(l, axis, s, &mut block_out);
                o.iter_mut().zip(&block_out).for_each(|(o, b)| *o += b * scale);
            }
        } else {
            for (k, (s, o)) in src.chunks(d2).zip(dst.chunks_mut(d2)).enumerate() {
                let n = if axis == 4 {
                    k as i64 / m - n0
                } else {
                    k as i64 % m - n0
                };
                let factor = C64::new(0.0, scale * PI * n as f64 / band.half_width());
                o.iter_mut().zip(s).for_each(|(o, s)| *o += s * factor);
            }
        }
    }
    Ok(())
}

/// Sparse Fourier-series coefficients of a function on the torus alone,
/// indexed by `n` with `|n_j| < 2 n0`: every shift that maps some in-band
/// index to another in-band index.
#[derive(Debug, Clone, PartialEq)]
pub struct TorusCoefficients {
    n0: usize,
    entries: Vec<([i64; 2], C64)>,
}

impl TorusCoefficients {
    pub fn new(n0: usize) -> Self {
        Self {
            n0,
            entries: Vec::new(),
        }
    }

    /// Builds from a dense `(2 n0) x (2 n0)` array in signed order, dropping zeros.
    pub fn from_dense(n0: usize, dense: &[C64]) -> Result<Self> {
        let m = 2 * n0;
        if dense.len() != m * m {
            return Err(Error::DimensionMismatch {
                expected: m * m,
                actual: dense.len(),
            });
        }
        let mut out = Self::new(n0);
        for (k, &v) in dense.iter().enumerate() {
            if v != C64::new(0.0, 0.0) {
                out.entries.push(([(k / m) as i64 - n0 as i64, (k % m) as i64 - n0 as i64], v));
            }
        }
        Ok(out)
    }

    pub fn n0(&self) -> usize {
        self.n0
    }

    pub fn push(&mut self, n: [i64; 2], value: C64) {
        let reach = 2 * self.n0 as i64;
        assert!(
            n[0].abs() < reach && n[1].abs() < reach,
            "torus shift {n:?} outside reach of band n0={}",
            self.n0
        );
        self.entries.push((n, value));
    }

    pub fn entries(&self) -> &[([i64; 2], C64)] {
        &self.entries
    }

    pub fn get(&self, n: [i64; 2]) -> C64 {
        self.entries
            .iter()
            .filter(|(k, _)| *k == n)
            .map(|(_, v)| *v)
            .sum()
    }
}

/// Fourier series of `Omega_axis` (axis 0 or 1) on `[-L, L)`:
/// `i L (-1)^n / (pi n)` for `n != 0`, zero at `n = 0`, kept for every
/// `|n| < 2 n0` so the truncated product is exact on the band.
pub fn sawtooth_coefficients(band: BandLimit, axis: usize) -> TorusCoefficients {
    assert!(axis < 2, "torus axis must be 0 or 1");
    let reach = 2 * band.n0() as i64;
    let mut out = TorusCoefficients::new(band.n0());
    for n in 1 - reach..reach {
        if n == 0 {
            continue;
        }
        let sign = if n % 2 == 0 { 1.0 } else { -1.0 };
        let v = C64::new(0.0, band.half_width() * sign / (PI * n as f64));
        let idx = if axis == 0 { [n, 0] } else { [0, n] };
        out.push(idx, v);
    }
    out
}

/// Coefficients of the product `f g` for a torus-only `g`:
/// `sum_{n'} F^{l, n - n'}[f] G^{n'}`, dropping out-of-band `n - n'`.
pub fn torus_convolution(f: &SpectralCoeffs, g: &TorusCoefficients) -> Result<SpectralCoeffs> {
    let mut out = SpectralCoeffs::zeros(f.band());
    accumulate_torus_convolution(&mut out, f, g, 1.0)?;
    Ok(out)
}

/// `out += scale * (f * g)` in the sense of [`torus_convolution`].
pub fn accumulate_torus_convolution(
    out: &mut SpectralCoeffs,
    f: &SpectralCoeffs,
    g: &TorusCoefficients,
    scale: f64,
) -> Result<()> {
    let band = f.band();
    if g.n0() != band.n0() {
        return Err(Error::DimensionMismatch {
            expected: band.torus_len(),
            actual: (2 * g.n0()).pow(2),
        });
    }
    let n0 = band.n0() as i64;
    let m = 2 * n0;
    for l in 0..band.l0() {
        let d2 = rep_dim(l) * rep_dim(l);
        let src = f.degree(l);
        let dst = out.degree_mut(l);
        for &(shift, v) in g.entries() {
            let w = v * scale;
            // target n in band with n - shift in band
            let lo1 = (-n0).max(-n0 + shift[0]);
            let hi1 = n0.min(n0 + shift[0]);
            let lo2 = (-n0).max(-n0 + shift[1]);
            let hi2 = n0.min(n0 + shift[1]);
            for n1 in lo1..hi1 {
                for n2 in lo2..hi2 {
                    let kt = ((n1 + n0) * m + n2 + n0) as usize;
                    let ks = ((n1 - shift[0] + n0) * m + n2 - shift[1] + n0) as usize;
                    let s = &src[ks * d2..(ks + 1) * d2];
                    let o = &mut dst[kt * d2..(kt + 1) * d2];
                    o.iter_mut().zip(s).for_each(|(o, s)| *o += s * w);
                }
            }
        }
    }
    Ok(())
}

impl SpectralCoeffs {
    /// Evaluates the band-limited series at an arbitrary point given by
    /// 3-2-3 Euler angles and angular velocity.
    pub fn evaluate(&self, alpha: f64, beta: f64, gamma: f64, omega: [f64; 2]) -> C64 {
        let band = self.band();
        let n0 = band.n0() as i64;
        let lw = band.half_width();
        let mut total = C64::new(0.0, 0.0);
        let dmats = wigner_d(band.l0() - 1, beta);
        for (l, dmat) in dmats.iter().enumerate() {
            let d = rep_dim(l);
            let li = l as i64;
            let u = DMatrix::from_fn(d, d, |r, c| {
                let m1 = (r as i64 - li) as f64;
                let m2 = (c as i64 - li) as f64;
                C64::from_polar(dmat[(r, c)], -(m1 * alpha + m2 * gamma))
            });
            for n1 in -n0..n0 {
                for n2 in -n0..n0 {
                    let block = self.block(l, [n1, n2]);
                    let mut tr = C64::new(0.0, 0.0);
                    for r in 0..d {
                        for c in 0..d {
                            tr += block[r * d + c] * u[(c, r)];
                        }
                    }
                    let phase = PI * (n1 as f64 * omega[0] + n2 as f64 * omega[1]) / lw;
                    total += tr * C64::from_polar(d as f64, phase);
                }
            }
        }
        total
    }
}
