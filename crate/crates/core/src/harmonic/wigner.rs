use nalgebra::DMatrix;

use super::{rep_dim, So3Grid};

/// Real Wigner-d matrices `d^l(beta)` for `l = 0..=l_max`, entry `(m1+l, m2+l)`.
///
/// Computed with the three-term recursion in `l` started from the closed form
/// at `l = max(|m1|, |m2|)`. The phase convention satisfies
/// `d^l(beta) = exp(beta u^l(e2))`.
pub fn wigner_d(l_max: usize, beta: f64) -> Vec<DMatrix<f64>> {
    let cb = beta.cos();
    let lf = LogFactorials::new(2 * l_max + 2);
    let mut out: Vec<DMatrix<f64>> = (0..=l_max)
        .map(|l| DMatrix::zeros(rep_dim(l), rep_dim(l)))
        .collect();
    let lm = l_max as i64;
    let mut column = vec![0.0; l_max + 1];
    for m1 in -lm..=lm {
        for m2 in -lm..=lm {
            let start = m1.unsigned_abs().max(m2.unsigned_abs()) as usize;
            recurse_in_l(&mut column, start, l_max, m1, m2, beta, cb, &lf);
            for l in start..=l_max {
                let li = l as i64;
                out[l][((m1 + li) as usize, (m2 + li) as usize)] = column[l];
            }
        }
    }
    out
}

/// Fills `column[l]` for `l = start..=l_max` with `d^l_{m1,m2}(beta)`.
#[allow(clippy::too_many_arguments)]
fn recurse_in_l(
    column: &mut [f64],
    start: usize,
    l_max: usize,
    m1: i64,
    m2: i64,
    beta: f64,
    cb: f64,
    lf: &LogFactorials,
) {
    column[start] = closed_form(start as i64, m1, m2, beta, lf);
    if start == l_max {
        return;
    }
    let (mf, nf) = (m1 as f64, m2 as f64);
    let mut prev = 0.0;
    let mut cur = column[start];
    for j in start..l_max {
        let jf = j as f64;
        let next = if j == 0 {
            cb
        } else {
            let a = (2.0 * jf + 1.0) * (jf * (jf + 1.0) * cb - mf * nf);
            let b = (jf + 1.0) * ((jf * jf - mf * mf) * (jf * jf - nf * nf)).max(0.0).sqrt();
            let denom = jf
                * (((jf + 1.0).powi(2) - mf * mf) * ((jf + 1.0).powi(2) - nf * nf)).sqrt();
            (a * cur - b * prev) / denom
        };
        prev = cur;
        cur = next;
        column[j + 1] = cur;
    }
}

/// Wigner's explicit sum, used for the recursion seeds and as a test oracle.
pub fn wigner_d_direct(l: usize, m1: i64, m2: i64, beta: f64) -> f64 {
    let lf = LogFactorials::new(2 * l + 2);
    closed_form(l as i64, m1, m2, beta, &lf)
}

fn closed_form(j: i64, m1: i64, m2: i64, beta: f64, lf: &LogFactorials) -> f64 {
    if m1.abs() > j || m2.abs() > j {
        return 0.0;
    }
    let (sh, ch) = (0.5 * beta).sin_cos();
    let norm = 0.5 * (lf.get(j + m1) + lf.get(j - m1) + lf.get(j + m2) + lf.get(j - m2));
    let s_min = 0.max(m2 - m1);
    let s_max = (j + m2).min(j - m1);
    let mut total = 0.0;
    for s in s_min..=s_max {
        let denom = lf.get(j + m2 - s) + lf.get(s) + lf.get(m1 - m2 + s) + lf.get(j - m1 - s);
        let pc = (2 * j + m2 - m1 - 2 * s) as i32;
        let ps = (m1 - m2 + 2 * s) as i32;
        let sign = if (m1 - m2 + s) % 2 == 0 { 1.0 } else { -1.0 };
        total += sign * (norm - denom).exp() * ch.powi(pc) * sh.powi(ps);
    }
    total
}

struct LogFactorials(Vec<f64>);

impl LogFactorials {
    fn new(n: usize) -> Self {
        let mut v = Vec::with_capacity(n + 1);
        v.push(0.0);
        for k in 1..=n {
            let prev = v[k - 1];
            v.push(prev + (k as f64).ln());
        }
        Self(v)
    }

    fn get(&self, k: i64) -> f64 {
        self.0[k as usize]
    }
}

/// `d^l_{m1,m2}(beta_nu2)` for all grid betas, stored `[l][m1][m2][nu2]`.
#[derive(Debug, Clone)]
pub struct WignerTable {
    l0: usize,
    n_beta: usize,
    values: Vec<f64>,
}

impl WignerTable {
    pub fn new(grid: &So3Grid, l0: usize) -> Self {
        let n_beta = grid.beta.len();
        let mut values = vec![0.0; table_offset(l0, n_beta)];
        for (v, &b) in grid.beta.iter().enumerate() {
            let mats = wigner_d(l0 - 1, b);
            for (l, mat) in mats.iter().enumerate() {
                let d = rep_dim(l);
                let base = table_offset(l, n_beta);
                for r in 0..d {
                    for c in 0..d {
                        values[base + (r * d + c) * n_beta + v] = mat[(r, c)];
                    }
                }
            }
        }
        Self { l0, n_beta, values }
    }

    pub fn l0(&self) -> usize {
        self.l0
    }

    /// Values of `d^l_{m1,m2}` over the beta grid.
    pub fn column(&self, l: usize, m1: i64, m2: i64) -> &[f64] {
        let d = rep_dim(l);
        let li = l as i64;
        let r = (m1 + li) as usize;
        let c = (m2 + li) as usize;
        let start = table_offset(l, self.n_beta) + (r * d + c) * self.n_beta;
        &self.values[start..start + self.n_beta]
    }

    pub fn get(&self, l: usize, m1: i64, m2: i64, nu2: usize) -> f64 {
        self.column(l, m1, m2)[nu2]
    }

    /// The matrix `d^l(beta_nu2)`.
    pub fn matrix(&self, l: usize, nu2: usize) -> DMatrix<f64> {
        let d = rep_dim(l);
        let li = l as i64;
        DMatrix::from_fn(d, d, |r, c| self.get(l, r as i64 - li, c as i64 - li, nu2))
    }
}

fn table_offset(l: usize, n_beta: usize) -> usize {
    n_beta * (l * (4 * l * l).saturating_sub(1)) / 3
}
