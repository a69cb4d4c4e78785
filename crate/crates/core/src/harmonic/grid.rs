use std::f64::consts::PI;

use super::BandLimit;

/// Equiangular Euler-angle grid with `2 l0` points per axis and the
/// beta-only quadrature weights that make the transform exact.
#[derive(Debug, Clone)]
pub struct So3Grid {
    pub alpha: Vec<f64>,
    pub beta: Vec<f64>,
    pub gamma: Vec<f64>,
    /// Weight of every grid point sharing `beta[nu2]`; the weights of the
    /// full three-index grid sum to one.
    pub weights: Vec<f64>,
}

impl So3Grid {
    pub fn new(l0: usize) -> Self {
        let n = 2 * l0;
        let l0f = l0 as f64;
        let alpha: Vec<f64> = (0..n).map(|v| PI * v as f64 / l0f).collect();
        let gamma = alpha.clone();
        let beta: Vec<f64> = (0..n)
            .map(|v| PI * (2 * v + 1) as f64 / (4.0 * l0f))
            .collect();
        let weights = beta
            .iter()
            .map(|&b| {
                let series: f64 = (0..l0)
                    .map(|j| {
                        let k = (2 * j + 1) as f64;
                        (k * b).sin() / k
                    })
                    .sum();
                b.sin() * series / (4.0 * l0f.powi(3))
            })
            .collect();
        Self {
            alpha,
            beta,
            gamma,
            weights,
        }
    }

    pub fn len(&self) -> usize {
        self.alpha.len()
    }

    pub fn is_empty(&self) -> bool {
        self.alpha.is_empty()
    }
}

/// Uniform grid on `[-L, L)^2` with `2 n0` points per axis.
#[derive(Debug, Clone)]
pub struct TorusGrid {
    /// Node values `mu L / n0` for `mu = -n0 .. n0-1`, shared by both axes.
    pub omega: Vec<f64>,
    /// Haar-normalized weight `1 / (2 n0)^2`.
    pub haar_weight: f64,
    /// Lebesgue weight, the area `(L / n0)^2` of one grid cell.
    pub lebesgue_weight: f64,
}

impl TorusGrid {
    pub fn new(n0: usize, half_width: f64) -> Self {
        let m = 2 * n0;
        let spacing = half_width / n0 as f64;
        let omega = (0..m)
            .map(|j| (j as f64 - n0 as f64) * spacing)
            .collect();
        Self {
            omega,
            haar_weight: 1.0 / (m * m) as f64,
            lebesgue_weight: spacing * spacing,
        }
    }

    pub fn spacing(&self) -> f64 {
        self.lebesgue_weight.sqrt()
    }

    pub fn len(&self) -> usize {
        self.omega.len()
    }

    pub fn is_empty(&self) -> bool {
        self.omega.is_empty()
    }
}

impl BandLimit {
    pub fn so3_grid(&self) -> So3Grid {
        So3Grid::new(self.l0())
    }

    pub fn torus_grid(&self) -> TorusGrid {
        TorusGrid::new(self.n0(), self.half_width())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn smallest_grid_nodes() {
        let g = So3Grid::new(1);
        assert_eq!(g.alpha, vec![0.0, PI]);
        assert_eq!(g.gamma, vec![0.0, PI]);
        assert_relative_eq!(g.beta[0], PI / 4.0);
        assert_relative_eq!(g.beta[1], 3.0 * PI / 4.0);
    }

    #[test]
    fn weights_integrate_constant() {
        for l0 in 1..20 {
            let g = So3Grid::new(l0);
            let n = (2 * l0) as f64;
            let total: f64 = g.weights.iter().sum::<f64>() * n * n;
            assert!((total - 1.0).abs() < 1e-12, "l0={l0} total={total}");
        }
    }

    #[test]
    fn weights_integrate_sin_beta_moments() {
        // Haar measure on beta is sin(beta)/2 d(beta); check E[cos^2 beta] = 1/3.
        let l0 = 6;
        let g = So3Grid::new(l0);
        let n = (2 * l0) as f64;
        let m: f64 = g
            .beta
            .iter()
            .zip(&g.weights)
            .map(|(b, w)| w * b.cos().powi(2))
            .sum::<f64>()
            * n
            * n;
        assert_relative_eq!(m, 1.0 / 3.0, epsilon = 1e-12);
    }

    #[test]
    fn torus_grid_small() {
        let t = TorusGrid::new(2, 1.0);
        assert_eq!(t.omega, vec![-1.0, -0.5, 0.0, 0.5]);
        assert_relative_eq!(t.haar_weight, 1.0 / 16.0);
        assert_relative_eq!(t.lebesgue_weight, 0.25);
    }
}
