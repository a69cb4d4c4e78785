//! Harmonic analysis on SO(3) x T^2.
//!
//! Functions on the product group are expanded in the matrix elements of the
//! irreducible representations `U^l(R) V^n(Omega)`, with `U^l` built from 3-2-3
//! Euler angles and real Wigner-d matrices, and `V^n` the torus characters
//! `exp(i pi n . Omega / L)`.
//!
//! Coefficient convention: the block stored for `(l, n)` is the matrix
//! `F^{l,n} = sum_grid w f(g) U^l(g^{-1}) conj(V^n)`, so that derivatives act by
//! left multiplication (`F[L_j f] = u^l(e_j) F[f]`) and the reconstruction is
//! `f = sum d(l) tr(F^{l,n} U^l) V^n`. With this convention the basis element
//! `U^l_{m1,m2} V^n` lands at matrix entry `(m2, m1)` of its block.

mod coeffs;
mod grid;
mod lie;
mod ops;
mod wigner;
mod workspace;

pub use coeffs::{GridDensity, SpectralCoeffs, SpectralDensity};
pub use grid::{So3Grid, TorusGrid};
pub use lie::{apply_so3_generator, lie_algebra_so3, lie_algebra_torus, DenseMatrix};
pub use ops::{
    accumulate_derivative, accumulate_torus_convolution, representation_matrix,
    sawtooth_coefficients, spectral_derivative, torus_convolution, TorusCoefficients,
};
pub use wigner::{wigner_d, wigner_d_direct, WignerTable};
pub use workspace::{HarmonicWorkspace, DEFAULT_MAX_GRID_POINTS};
pub(crate) use workspace::pairwise_sum;

use crate::error::{Error, Result};

pub type C64 = num_complex::Complex64;

/// Truncation of the representation indices: `l < l0` on SO(3) and
/// `-n0 <= n_j < n0` on each torus axis, with `Omega_j` in `[-L, L)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BandLimit {
    l0: usize,
    n0: usize,
    half_width: f64,
}

impl BandLimit {
    pub fn new(l0: usize, n0: usize, half_width: f64) -> Result<Self> {
        if l0 == 0 {
            return Err(Error::InvalidBandLimit("l0 must be at least 1".into()));
        }
        if n0 == 0 {
            return Err(Error::InvalidBandLimit("n0 must be at least 1".into()));
        }
        if !(half_width > 0.0 && half_width.is_finite()) {
            return Err(Error::InvalidBandLimit(format!(
                "torus half-width L must be positive, got {half_width}"
            )));
        }
        Ok(Self { l0, n0, half_width })
    }

    pub fn l0(&self) -> usize {
        self.l0
    }

    pub fn n0(&self) -> usize {
        self.n0
    }

    /// Torus half-width `L` in rad/s.
    pub fn half_width(&self) -> f64 {
        self.half_width
    }

    /// Grid points per SO(3) Euler-angle axis (`2 l0`).
    pub fn so3_points(&self) -> usize {
        2 * self.l0
    }

    /// Grid points per torus axis (`2 n0`).
    pub fn torus_points(&self) -> usize {
        2 * self.n0
    }

    /// Number of attitude grid points `(2 l0)^3`.
    pub fn attitude_len(&self) -> usize {
        self.so3_points().pow(3)
    }

    /// Number of torus grid points `(2 n0)^2`.
    pub fn torus_len(&self) -> usize {
        self.torus_points().pow(2)
    }

    /// Values in one mode of a product-grid function.
    pub fn grid_len(&self) -> usize {
        self.attitude_len() * self.torus_len()
    }

    /// Complex coefficients per mode: `sum_l (2l+1)^2 * (2 n0)^2`.
    pub fn coeff_len(&self) -> usize {
        block_offset(self.l0, self.n0, self.l0)
    }
}

/// Start of the ragged `l` block in a coefficient array.
#[inline]
pub(crate) fn block_offset(l: usize, n0: usize, _l0: usize) -> usize {
    // sum_{l' < l} (2l'+1)^2 = l (4 l^2 - 1) / 3
    let m = 2 * n0;
    m * m * (l * (4 * l * l).saturating_sub(1)) / 3
}

/// `d(l) = 2l + 1`.
#[inline]
pub fn rep_dim(l: usize) -> usize {
    2 * l + 1
}
