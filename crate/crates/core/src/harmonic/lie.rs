use nalgebra::DMatrix;
use std::f64::consts::PI;

use super::{rep_dim, C64};

pub type DenseMatrix = DMatrix<C64>;

/// `c^l_m = sqrt((l - m)(l + m + 1))`.
fn c_coef(l: i64, m: i64) -> f64 {
    (((l - m) * (l + m + 1)) as f64).max(0.0).sqrt()
}

/// Nonzero entries of row `m1` of `u^l(e_axis)`: the coefficients multiplying
/// columns `m1 - 1`, `m1` and `m1 + 1`.
#[inline]
fn generator_row(l: i64, axis: usize, m1: i64) -> (C64, C64, C64) {
    let below = c_coef(l, m1 - 1);
    let above = c_coef(l, -(m1 + 1));
    match axis {
        1 => (
            C64::new(0.0, -0.5 * below),
            C64::new(0.0, 0.0),
            C64::new(0.0, -0.5 * above),
        ),
        2 => (
            C64::new(-0.5 * below, 0.0),
            C64::new(0.0, 0.0),
            C64::new(0.5 * above, 0.0),
        ),
        3 => (
            C64::new(0.0, 0.0),
            C64::new(0.0, -(m1 as f64)),
            C64::new(0.0, 0.0),
        ),
        _ => unreachable!("so(3) generator axis must be 1, 2 or 3"),
    }
}

/// Lie-algebra representation `u^l(e_1), u^l(e_2), u^l(e_3)`, rows and
/// columns ordered `m = -l..=l`.
pub fn lie_algebra_so3(l: usize) -> [DenseMatrix; 3] {
    let d = rep_dim(l);
    let li = l as i64;
    let build = |axis: usize| {
        let mut u = DMatrix::zeros(d, d);
        for r in 0..d {
            let m1 = r as i64 - li;
            let (lo, diag, hi) = generator_row(li, axis, m1);
            if r > 0 {
                u[(r, r - 1)] = lo;
            }
            u[(r, r)] = diag;
            if r + 1 < d {
                u[(r, r + 1)] = hi;
            }
        }
        u
    };
    [build(1), build(2), build(3)]
}

/// `v^n(e_j) = i pi n_j / L` for both torus axes.
pub fn lie_algebra_torus(n: [i64; 2], half_width: f64) -> [C64; 2] {
    [
        C64::new(0.0, PI * n[0] as f64 / half_width),
        C64::new(0.0, PI * n[1] as f64 / half_width),
    ]
}

/// `out = u^l(e_axis) * block` for a row-major `d x d` block, without forming
/// the (tridiagonal) generator.
pub fn apply_so3_generator(l: usize, axis: usize, block: &[C64], out: &mut [C64]) {
    let d = rep_dim(l);
    let li = l as i64;
    debug_assert_eq!(block.len(), d * d);
    for r in 0..d {
        let (lo, diag, hi) = generator_row(li, axis, r as i64 - li);
        let row = &mut out[r * d..(r + 1) * d];
        row.iter_mut().for_each(|z| *z = C64::new(0.0, 0.0));
        if r > 0 {
            let src = &block[(r - 1) * d..r * d];
            row.iter_mut().zip(src).for_each(|(o, s)| *o += lo * s);
        }
        if diag != C64::new(0.0, 0.0) {
            let src = &block[r * d..(r + 1) * d];
            row.iter_mut().zip(src).for_each(|(o, s)| *o += diag * s);
        }
        if r + 1 < d {
            let src = &block[(r + 1) * d..(r + 2) * d];
            row.iter_mut().zip(src).for_each(|(o, s)| *o += hi * s);
        }
    }
}
