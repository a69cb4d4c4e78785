//! Acceptance checks with one PASS/FAIL line each. Non-flag arguments
//! select checks by substring, e.g. `cargo test --test acceptance -- heat`.

use std::cell::OnceCell;
use std::f64::consts::PI;
use std::process::ExitCode;
use std::time::Instant;

use nalgebra::{Matrix3, Vector3};
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use liefp::continuous::{ContinuousStepper, Integrator};
use liefp::harmonic::{
    rep_dim, representation_matrix, spectral_derivative, BandLimit, GridDensity, HarmonicWorkspace, SpectralCoeffs,
    SpectralDensity, C64,
};
use liefp::model::{grid_omega, grid_rotation, GshsModel, HybridState};
use liefp::montecarlo::{run_ensemble, McConfig};
use liefp::pendulum::{Pendulum, PendulumParams};
use liefp::so3;
use liefp::splitting::Propagator;
use liefp::stats::{compare, density_moments, MomentSummary};

const SEED: u64 = 20_240_601;
const MC_SAMPLES: usize = 100_000;
/// Euler-Maruyama steps per `DT` in the reference ensemble (0.5 ms).
const MC_SUBSTEPS: usize = 10;
const DT: f64 = 0.005;
/// Steps between recorded moments (0.05 s).
const STRIDE: usize = 10;

struct Outcome {
    pass: bool,
    detail: String,
}

impl Outcome {
    fn new(pass: bool, detail: impl Into<String>) -> Self {
        Self {
            pass,
            detail: detail.into(),
        }
    }
}

fn random_coeffs(band: BandLimit, rng: &mut ChaCha8Rng) -> SpectralCoeffs {
    let data = (0..band.coeff_len())
        .map(|_| C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
        .collect();
    SpectralCoeffs::from_vec(band, data).unwrap()
}

fn transform_round_trip() -> Outcome {
    let start = Instant::now();
    let ws = HarmonicWorkspace::build(BandLimit::new(8, 8, 14.5).unwrap()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    let mut worst: f64 = 0.0;
    for _ in 0..50 {
        let f = random_coeffs(ws.band(), &mut rng);
        let mut back = ws.forward_transform(&ws.inverse_transform(&f).unwrap()).unwrap();
        back.add_scaled(-1.0, &f);
        worst = worst.max(back.norm() / f.norm());
    }
    let secs = start.elapsed().as_secs_f64();
    Outcome::new(
        worst < 1e-10 && secs < 30.0,
        format!("max relative error {worst:.2e} (< 1e-10), {secs:.1} s (< 30 s)"),
    )
}

fn basis_orthogonality() -> Outcome {
    let (l_max, n_max) = (6usize, 4i64);
    let ws = HarmonicWorkspace::build(BandLimit::new(l_max, n_max as usize, 14.5).unwrap()).unwrap();
    let band = ws.band();
    let g = ws.so3_grid();
    let n = g.len();
    let m = band.torus_points();
    let mut reps: Vec<Vec<nalgebra::DMatrix<C64>>> = Vec::new();
    for l in 0..l_max {
        let mut per_point = Vec::with_capacity(n * n * n);
        for v1 in 0..n {
            for v2 in 0..n {
                for v3 in 0..n {
                    per_point.push(representation_matrix(l, g.alpha[v1], g.beta[v2], g.gamma[v3]));
                }
            }
        }
        reps.push(per_point);
    }
    let mut own_err: f64 = 0.0;
    let mut off_max: f64 = 0.0;
    let mut count = 0;
    let mut values = vec![C64::new(0.0, 0.0); band.grid_len()];
    for l in 0..l_max {
        let li = l as i64;
        for n1 in -(n_max - 1)..n_max {
            for n2 in -(n_max - 1)..n_max {
                let torus: Vec<C64> = (0..m * m)
                    .map(|k| ws.torus_phase(k / m, n1) * ws.torus_phase(k % m, n2))
                    .collect();
                for m1 in -li..=li {
                    for m2 in -li..=li {
                        let (r, c) = ((m1 + li) as usize, (m2 + li) as usize);
                        for (a, u) in reps[l].iter().enumerate() {
                            let ua = u[(r, c)];
                            for (k, t) in torus.iter().enumerate() {
                                values[a * m * m + k] = ua * t;
                            }
                        }
                        let coeffs = ws.forward_transform(&values).unwrap();
                        let own = coeffs.index(l, [n1, n2], m2, m1);
                        for (i, z) in coeffs.as_slice().iter().enumerate() {
                            if i == own {
                                own_err = own_err.max((z - C64::new(1.0 / rep_dim(l) as f64, 0.0)).norm());
                            } else {
                                off_max = off_max.max(z.norm());
                            }
                        }
                        count += 1;
                    }
                }
            }
        }
    }
    Outcome::new(
        own_err < 1e-10 && off_max < 1e-10,
        format!("{count} basis elements: own-index error {own_err:.2e}, largest other {off_max:.2e} (< 1e-10)"),
    )
}

fn derivative_identity() -> Outcome {
    let band = BandLimit::new(8, 8, 14.5).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(SEED + 1);
    // Unit coefficient norm fixes the scale the absolute tolerance refers to.
    let mut f = random_coeffs(band, &mut rng);
    f.scale(1.0 / f.norm());
    let derivs: Vec<SpectralCoeffs> = (1..=5).map(|j| spectral_derivative(&f, j).unwrap()).collect();
    // Balances the O(h^2) truncation against the roundoff of evaluating at
    // a perturbed rotation.
    let h = 2e-6;
    let mut worst: f64 = 0.0;
    let mut scale: f64 = 0.0;
    for _ in 0..8 {
        let r = so3::euler_zyz(
            rng.random_range(0.0..2.0 * PI),
            rng.random_range(0.2..PI - 0.2),
            rng.random_range(0.0..2.0 * PI),
        );
        let om = [rng.random_range(-14.0..14.0), rng.random_range(-14.0..14.0)];
        let eval = |c: &SpectralCoeffs, r: &Matrix3<f64>, om: [f64; 2]| {
            let (a, b, g) = so3::zyz_angles(r);
            c.evaluate(a, b, g, om)
        };
        for (j, d) in derivs.iter().enumerate() {
            let (plus, minus) = if j < 3 {
                let e = Vector3::ith(j, h);
                (eval(&f, &(r * so3::exp(&e)), om), eval(&f, &(r * so3::exp(&-e)), om))
            } else {
                let mut op = om;
                let mut omn = om;
                op[j - 3] += h;
                omn[j - 3] -= h;
                (eval(&f, &r, op), eval(&f, &r, omn))
            };
            let fd = (plus - minus) / (2.0 * h);
            let exact = eval(d, &r, om);
            worst = worst.max((fd - exact).norm());
            scale = scale.max(exact.norm());
        }
    }
    Outcome::new(
        worst < 1e-6,
        format!("max |spectral - central difference| {worst:.2e} (< 1e-6) over 5 axes, derivative magnitude up to {scale:.1e}"),
    )
}

/// Pure torus diffusion with a constant diffusion matrix.
struct TorusHeat {
    d: [[f64; 2]; 2],
}

impl GshsModel for TorusHeat {
    fn drift(&self, _t: f64, _mode: usize, _r: &Matrix3<f64>, _o: [f64; 2]) -> [f64; 5] {
        [0.0; 5]
    }
    fn diffusion(&self, _mode: usize) -> [[f64; 2]; 2] {
        self.d
    }
    fn has_jumps(&self) -> bool {
        false
    }
    fn rate(&self, _mode: usize, _r: &Matrix3<f64>, _o: [f64; 2]) -> f64 {
        0.0
    }
    fn kernel_density(&self, _r: &Matrix3<f64>, _a: [f64; 2], _s: usize, _b: [f64; 2], _t: usize) -> f64 {
        0.0
    }
    fn sample_reset(&self, state: &HybridState, _rng: &mut dyn RngCore) -> HybridState {
        *state
    }
    fn initial_density(&self, ws: &HarmonicWorkspace) -> liefp::Result<GridDensity> {
        let band = ws.band();
        let v = 1.0 / (4.0 * band.half_width().powi(2));
        GridDensity::from_vec(band, 1, vec![v; band.grid_len()])
    }
    fn sample_initial(&self, _rng: &mut dyn RngCore) -> HybridState {
        HybridState::new(Matrix3::identity(), [0.0; 2], 0)
    }
}

fn heat_kernel() -> Outcome {
    let lw = 14.5;
    let ws = HarmonicWorkspace::build(BandLimit::new(3, 10, lw).unwrap()).unwrap();
    let model = TorusHeat {
        d: [[0.5, 0.0], [0.0, 0.5]],
    };
    let dt = 0.0025;
    let steps = 400;
    let stepper = ContinuousStepper::new(&ws, &model, Integrator::Rk4, dt).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(SEED + 2);
    let f0 = random_coeffs(ws.band(), &mut rng);
    // Keep the total probability fixed so the drift guard is meaningful.
    let mut f0 = f0;
    f0.set(0, [0, 0], 0, 0, C64::new(1.0 / (4.0 * lw * lw), 0.0));
    let mut p = SpectralDensity { modes: vec![f0.clone()] };
    for k in 0..steps {
        p = stepper.step_spectral(&p, k as f64 * dt).unwrap();
    }
    let t = steps as f64 * dt;
    let n0 = ws.band().n0() as i64;
    let mut worst: f64 = 0.0;
    for l in 0..ws.band().l0() {
        let li = l as i64;
        for n1 in -n0..n0 {
            for n2 in -n0..n0 {
                let decay = (-(PI / lw).powi(2) * (0.5 * (n1 * n1) as f64 + 0.5 * (n2 * n2) as f64) * t).exp();
                for m1 in -li..=li {
                    for m2 in -li..=li {
                        let want = f0.get(l, [n1, n2], m1, m2) * decay;
                        worst = worst.max((p.modes[0].get(l, [n1, n2], m1, m2) - want).norm());
                    }
                }
            }
        }
    }
    Outcome::new(worst < 1e-8, format!("max coefficient error {worst:.2e} after {steps} steps (< 1e-8)"))
}

/// Spectral moments every `STRIDE` steps with per-step conservation data.
struct SpectralRun {
    moments: Vec<MomentSummary>,
    snapshot_drift: f64,
    jump_drift: f64,
}

fn spectral_run(l0: usize, collisions: bool, steps: usize) -> SpectralRun {
    let ws = HarmonicWorkspace::build(BandLimit::new(l0, l0, PendulumParams::default().half_width).unwrap()).unwrap();
    let pend = Pendulum::new(PendulumParams::default(), collisions).unwrap();
    let prop = Propagator::new(&ws, &pend, Integrator::Rk4, DT).unwrap();
    let init = pend.initial_density(&ws).unwrap();
    let mut moments = vec![density_moments(&init, &ws, 0.0)];
    let mut snapshot_drift = (init.total_probability(&ws) - 1.0).abs();
    let mut jump_drift: f64 = 0.0;
    let mut coeffs = ws.forward_density(&init).unwrap();
    for k in 0..steps {
        coeffs = prop.continuous().step_spectral(&coeffs, k as f64 * DT).unwrap();
        let mut grid = ws.inverse_density(&coeffs).unwrap();
        if !prop.jumps().is_inactive() {
            let before = grid.total_probability(&ws);
            grid = prop.jumps().step(&grid, DT).unwrap();
            jump_drift = jump_drift.max((grid.total_probability(&ws) - before).abs());
            coeffs = ws.forward_density(&grid).unwrap();
        }
        if (k + 1) % STRIDE == 0 || k + 1 == steps {
            let t = (k + 1) as f64 * DT;
            snapshot_drift = snapshot_drift.max((grid.total_probability(&ws) - 1.0).abs());
            moments.push(density_moments(&grid, &ws, t));
        }
    }
    SpectralRun {
        moments,
        snapshot_drift,
        jump_drift,
    }
}

fn mc_moments(collisions: bool, t_final: f64) -> Vec<MomentSummary> {
    let pend = Pendulum::new(PendulumParams::default(), collisions).unwrap();
    let cfg = McConfig {
        n_samples: MC_SAMPLES,
        dt: DT,
        t_final,
        seed: SEED,
        snapshot_stride: STRIDE,
        substeps: MC_SUBSTEPS,
        window: pend.params().half_width,
    };
    run_ensemble(&pend, &cfg).unwrap().summaries
}

fn conservation(run: &SpectralRun) -> Outcome {
    Outcome::new(
        run.snapshot_drift < 1e-6 && run.jump_drift < 1e-12,
        format!(
            "max |P - 1| at snapshots {:.2e} (< 1e-6), max jump sub-step change {:.2e} (< 1e-12)",
            run.snapshot_drift, run.jump_drift
        ),
    )
}

/// Noise-free dynamics of the reduced pendulum, `(R, Omega_1, Omega_2)`.
fn pendulum_rhs(p: &PendulumParams, r: &Matrix3<f64>, om: [f64; 2]) -> (Matrix3<f64>, [f64; 2]) {
    let c = p.m_mass * p.g_acc * p.rho_z / p.j1;
    let dr = r * so3::hat(&Vector3::new(om[0], om[1], 0.0));
    let dom = [c * r[(2, 1)] - p.b[0] * om[0], -c * r[(2, 0)] - p.b[1] * om[1]];
    (dr, dom)
}

fn rk4_reference(p: &PendulumParams, r0: Matrix3<f64>, dt: f64, steps: usize) -> Vec<(Matrix3<f64>, [f64; 2])> {
    let mut out = vec![(r0, [0.0, 0.0])];
    let (mut r, mut om) = (r0, [0.0, 0.0]);
    let add = |r: &Matrix3<f64>, o: [f64; 2], k: &(Matrix3<f64>, [f64; 2]), s: f64| {
        (r + k.0 * s, [o[0] + k.1[0] * s, o[1] + k.1[1] * s])
    };
    for _ in 0..steps {
        let k1 = pendulum_rhs(p, &r, om);
        let (r2, o2) = add(&r, om, &k1, dt / 2.0);
        let k2 = pendulum_rhs(p, &r2, o2);
        let (r3, o3) = add(&r, om, &k2, dt / 2.0);
        let k3 = pendulum_rhs(p, &r3, o3);
        let (r4, o4) = add(&r, om, &k3, dt);
        let k4 = pendulum_rhs(p, &r4, o4);
        r += (k1.0 + k2.0 * 2.0 + k3.0 * 2.0 + k4.0) * (dt / 6.0);
        for i in 0..2 {
            om[i] += (k1.1[i] + 2.0 * k2.1[i] + 2.0 * k3.1[i] + k4.1[i]) * dt / 6.0;
        }
        r = so3::project_to_rotation(&r).0;
        out.push((r, om));
    }
    out
}

fn deterministic_limit() -> Outcome {
    let l0 = 10;
    let mut params = PendulumParams {
        hc: [[0.0; 3]; 2],
        ..PendulumParams::default()
    };
    // As sharp as the grid resolves: one torus cell in angular velocity.
    params.omega_std = params.half_width / l0 as f64;
    let ws = HarmonicWorkspace::build(BandLimit::new(l0, l0, params.half_width).unwrap()).unwrap();
    let pend = Pendulum::new(params.clone(), false).unwrap();
    let prop = Propagator::new(&ws, &pend, Integrator::Rk4, DT).unwrap();
    let steps = (0.5 / DT).round() as usize;
    let sub = 20;
    let r0 = so3::project_to_rotation(&params.fisher_matrix()).0;
    let reference = rk4_reference(&params, r0, DT / sub as f64, steps * sub);
    let att_cell = PI / l0 as f64;
    let om_cell = ws.torus_grid().spacing();
    let k_len = ws.band().torus_len();
    let mut state = prop.state(pend.initial_density(&ws).unwrap()).unwrap();
    let (mut worst_att, mut worst_om): (f64, f64) = (0.0, 0.0);
    for k in 0..=steps {
        if k > 0 {
            state = prop.step(state, (k - 1) as f64 * DT).unwrap();
        }
        let (idx, _) = state
            .grid
            .mode(0)
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |best, (i, &v)| if v > best.1 { (i, v) } else { best });
        let r = grid_rotation(&ws, idx / k_len);
        let om = grid_omega(&ws, idx % k_len);
        let (r_ref, om_ref) = &reference[k * sub];
        worst_att = worst_att.max(so3::geodesic_distance(&r, r_ref) / att_cell);
        worst_om = worst_om.max((om[0] - om_ref[0]).abs().max((om[1] - om_ref[1]).abs()) / om_cell);
    }
    Outcome::new(
        worst_att <= 1.0 && worst_om <= 1.0,
        format!("argmax offset over 0.5 s: attitude {worst_att:.2} cells, angular velocity {worst_om:.2} cells (<= 1)"),
    )
}

/// Largest b3 angle (deg) and relative std_omega difference over the
/// snapshots with `t <= t_max`.
fn mc_deviation(spectral: &[MomentSummary], mc: &[MomentSummary], t_max: f64) -> (f64, f64) {
    let diffs = compare(spectral, mc).unwrap();
    let mut angle: f64 = 0.0;
    let mut rel: f64 = 0.0;
    for (d, m) in diffs.iter().zip(mc) {
        if d.t > t_max + 1e-9 {
            break;
        }
        angle = angle.max(d.b3_angle.to_degrees());
        for i in 0..2 {
            rel = rel.max(d.std_omega[i].abs() / m.std_omega[i]);
        }
    }
    (angle, rel)
}

fn mc_agreement(free: &SpectralRun, collide: &SpectralRun, collision_window: f64) -> Outcome {
    let mc_free = mc_moments(false, 1.0);
    let (a_free, r_free) = mc_deviation(&free.moments, &mc_free, 1.0);
    let mc_col = mc_moments(true, 1.0);
    let (a_col, r_col) = mc_deviation(&collide.moments, &mc_col, collision_window);
    let window: Vec<&MomentSummary> = collide.moments.iter().filter(|m| m.t <= collision_window + 1e-9).collect();
    let first_neg = window.iter().position(|m| m.mean_omega[1] < 0.0);
    let crossing = first_neg.and_then(|i| window[i..].iter().find(|m| m.mean_omega[1] > 0.0).map(|m| m.t));
    let pass = a_free < 5.0 && r_free < 0.15 && a_col < 5.0 && r_col < 0.15 && crossing.is_some();
    Outcome::new(
        pass,
        format!(
            "free: b3 {a_free:.2} deg, std_omega {:.1}%; collisions (t <= {collision_window}): b3 {a_col:.2} deg, std_omega {:.1}%, mean Omega2 turns positive at {} (limits 5 deg, 15%)",
            100.0 * r_free,
            100.0 * r_col,
            crossing.map_or("never".to_string(), |t| format!("t = {t:.3} s"))
        ),
    )
}

fn collision_geometry() -> Outcome {
    let pend = Pendulum::new(PendulumParams::default(), true).unwrap();
    let p = pend.params();
    let rc = 0.040625f64.sqrt();
    let want = (0.12 / rc).asin() - (0.025 / rc).asin();
    let err = (pend.theta0() - want).abs();
    let delta = 1e-9;
    let jump = |th: f64| (pend.rate_profile(th + delta) - pend.rate_profile(th - delta)).abs();
    let lo = jump(pend.theta0() - p.theta_t);
    let hi = jump(pend.theta0() + p.theta_t);
    let tol = 1e-6 * p.lambda_max;
    Outcome::new(
        err < 1e-12 && lo < tol && hi < tol,
        format!(
            "theta0 = {:.5} rad (error {err:.1e}), rate jumps at the ramp ends {lo:.1e} and {hi:.1e} (< {tol:.0e})",
            pend.theta0()
        ),
    )
}

fn bandwidth_trend() -> Outcome {
    let t_final = 0.25;
    let steps = (t_final / DT).round() as usize;
    let mc = mc_moments(false, t_final);
    let last = mc.last().unwrap();
    let diff = |l0: usize| {
        let run = spectral_run(l0, false, steps);
        let s = run.moments.last().unwrap();
        (s.std_omega[0] - last.std_omega[0]).hypot(s.std_omega[1] - last.std_omega[1])
    };
    let coarse = diff(8);
    let fine = diff(12);
    Outcome::new(
        fine <= coarse,
        format!("|std_omega difference| at t = {t_final} s: l0=n0=12 {fine:.3e} vs l0=n0=8 {coarse:.3e}"),
    )
}

fn main() -> ExitCode {
    let filters: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let selected = |name: &str| filters.is_empty() || filters.iter().any(|f| name.contains(f.as_str()));
    let collide: OnceCell<SpectralRun> = OnceCell::new();
    let free: OnceCell<SpectralRun> = OnceCell::new();
    let full = (1.0 / DT).round() as usize;
    let collide_run = || collide.get_or_init(|| spectral_run(10, true, full));
    let free_run = || free.get_or_init(|| spectral_run(10, false, full));

    let checks: Vec<(&str, Box<dyn Fn() -> Outcome + '_>)> = vec![
        ("transform_round_trip", Box::new(transform_round_trip)),
        ("basis_orthogonality", Box::new(basis_orthogonality)),
        ("derivative_identity", Box::new(derivative_identity)),
        ("heat_kernel_decay", Box::new(heat_kernel)),
        ("conservation_with_collisions", Box::new(|| conservation(collide_run()))),
        ("deterministic_limit", Box::new(deterministic_limit)),
        ("mc_agreement", Box::new(|| mc_agreement(free_run(), collide_run(), 0.5))),
        ("collision_geometry", Box::new(collision_geometry)),
        ("bandwidth_trend", Box::new(bandwidth_trend)),
    ];
    let mut failed = 0;
    for (name, check) in &checks {
        if !selected(name) {
            continue;
        }
        let start = Instant::now();
        let out = check();
        let verdict = if out.pass { "PASS" } else { "FAIL" };
        println!("{verdict} {name}: {} [{:.1} s]", out.detail, start.elapsed().as_secs_f64());
        failed += usize::from(!out.pass);
    }
    if failed > 0 {
        println!("{failed} acceptance check(s) failed");
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}
