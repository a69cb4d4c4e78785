//! First-order splitting: a continuous step followed by a jump step.

use std::time::Instant;

use crate::continuous::{ContinuousStepper, Integrator};
use crate::discrete::JumpOperator;
use crate::error::{Error, Result};
use crate::harmonic::{GridDensity, HarmonicWorkspace, SpectralDensity};
use crate::model::{GshsModel, INIT_TOLERANCE};

/// Sub-step order. Only [`SplitOrder::ContinuousFirst`] is the production
/// scheme; the reverse exists to measure the splitting error.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SplitOrder {
    #[default]
    ContinuousFirst,
    JumpFirst,
}

/// Time stepping and output cadence of one run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunSettings {
    pub dt: f64,
    pub t_final: f64,
    /// Snapshots are emitted every `snapshot_stride` steps, plus the
    /// initial and final states.
    pub snapshot_stride: usize,
}

impl RunSettings {
    pub fn n_steps(&self) -> usize {
        (self.t_final / self.dt).round() as usize
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::InvalidParameter(format!("dt must be positive, got {}", self.dt)));
        }
        if !(self.t_final >= self.dt) {
            return Err(Error::InvalidParameter(format!(
                "t_final = {} must be at least dt = {}",
                self.t_final, self.dt
            )));
        }
        let steps = self.t_final / self.dt;
        if (steps - steps.round()).abs() > 1e-9 * steps.max(1.0) {
            return Err(Error::InvalidParameter(format!(
                "t_final = {} is not a multiple of dt = {}",
                self.t_final, self.dt
            )));
        }
        if self.snapshot_stride == 0 {
            return Err(Error::InvalidParameter("snapshot stride must be at least 1".into()));
        }
        Ok(())
    }
}

/// Per-step diagnostics.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepDiagnostics {
    pub step: usize,
    pub t: f64,
    pub total_probability: f64,
    pub min_density: f64,
    pub max_density: f64,
    /// Share of spectral energy in the top fifth of the band.
    pub high_band_fraction: f64,
    pub wall_ms: f64,
}

impl StepDiagnostics {
    /// `-min / max`, positive when the density has negative lobes.
    pub fn negativity(&self) -> f64 {
        if self.max_density > 0.0 {
            -self.min_density / self.max_density
        } else {
            0.0
        }
    }
}

/// Receives diagnostics every step and densities at snapshot steps.
pub trait Observer {
    fn on_step(&mut self, _diag: &StepDiagnostics) -> Result<()> {
        Ok(())
    }

    fn on_snapshot(&mut self, step: usize, t: f64, density: &GridDensity) -> Result<()>;
}

/// Keeps everything in memory; intended for tests and small grids.
#[derive(Debug, Default)]
pub struct CollectingObserver {
    pub diagnostics: Vec<StepDiagnostics>,
    pub snapshots: Vec<(usize, f64, GridDensity)>,
}

impl Observer for CollectingObserver {
    fn on_step(&mut self, diag: &StepDiagnostics) -> Result<()> {
        self.diagnostics.push(*diag);
        Ok(())
    }

    fn on_snapshot(&mut self, step: usize, t: f64, density: &GridDensity) -> Result<()> {
        self.snapshots.push((step, t, density.clone()));
        Ok(())
    }
}

/// Both sub-step operators for one model, grid and step size.
pub struct Propagator<'a> {
    ws: &'a HarmonicWorkspace,
    model: &'a dyn GshsModel,
    continuous: ContinuousStepper<'a>,
    jumps: JumpOperator,
    order: SplitOrder,
}

/// Density carried between steps in both representations.
#[derive(Debug, Clone, PartialEq)]
pub struct PropagationState {
    pub grid: GridDensity,
    pub coeffs: SpectralDensity,
}

impl<'a> Propagator<'a> {
    pub fn new(
        ws: &'a HarmonicWorkspace,
        model: &'a dyn GshsModel,
        scheme: Integrator,
        dt: f64,
    ) -> Result<Self> {
        let continuous = ContinuousStepper::new(ws, model, scheme, dt)?;
        let jumps = JumpOperator::build(model, ws)?;
        if let Some(defect) = jumps.kernel_defect() {
            if defect > 1e-3 {
                log::info!("reset kernel grid sums deviate from one by up to {defect:.3e}; columns renormalized");
            }
        }
        let product = dt * jumps.max_rate();
        if product >= 1.0 {
            return Err(Error::JumpStepTooLarge {
                dt,
                max_rate: jumps.max_rate(),
                product,
            });
        }
        Ok(Self {
            ws,
            model,
            continuous,
            jumps,
            order: SplitOrder::default(),
        })
    }

    pub fn with_order(mut self, order: SplitOrder) -> Self {
        self.order = order;
        self
    }

    pub fn with_drift_threshold(mut self, threshold: f64) -> Self {
        self.continuous = self.continuous.with_drift_threshold(threshold);
        self
    }

    pub fn continuous(&self) -> &ContinuousStepper<'a> {
        &self.continuous
    }

    pub fn jumps(&self) -> &JumpOperator {
        &self.jumps
    }

    pub fn model(&self) -> &dyn GshsModel {
        self.model
    }

    pub fn dt(&self) -> f64 {
        self.continuous.dt()
    }

    pub fn state(&self, grid: GridDensity) -> Result<PropagationState> {
        let coeffs = self.ws.forward_density(&grid)?;
        Ok(PropagationState { grid, coeffs })
    }

    fn continuous_part(&self, s: PropagationState, t: f64) -> Result<PropagationState> {
        let coeffs = self.continuous.step_spectral(&s.coeffs, t)?;
        let grid = self.ws.inverse_density(&coeffs)?;
        Ok(PropagationState { grid, coeffs })
    }

    fn jump_part(&self, s: PropagationState) -> Result<PropagationState> {
        if self.jumps.is_inactive() {
            return Ok(s);
        }
        let grid = self.jumps.step(&s.grid, self.dt())?;
        let coeffs = self.ws.forward_density(&grid)?;
        Ok(PropagationState { grid, coeffs })
    }

    /// One splitting step from `t` to `t + dt`.
    pub fn step(&self, s: PropagationState, t: f64) -> Result<PropagationState> {
        match self.order {
            SplitOrder::ContinuousFirst => self.jump_part(self.continuous_part(s, t)?),
            SplitOrder::JumpFirst => self.continuous_part(self.jump_part(s)?, t),
        }
    }

    /// Grid-only convenience wrapper around [`Self::step`].
    pub fn propagate_step(&self, p: &GridDensity, t: f64) -> Result<GridDensity> {
        Ok(self.step(self.state(p.clone())?, t)?.grid)
    }

    /// Runs from `t = 0`, reporting to `observer`; returns the final state.
    pub fn run(
        &self,
        init: GridDensity,
        settings: &RunSettings,
        observer: &mut dyn Observer,
    ) -> Result<PropagationState> {
        settings.validate()?;
        if (settings.dt - self.dt()).abs() > 1e-15 * self.dt() {
            return Err(Error::InvalidParameter(format!(
                "run dt {} differs from the propagator dt {}",
                settings.dt,
                self.dt()
            )));
        }
        let total = init.total_probability(self.ws);
        if (total - 1.0).abs() > INIT_TOLERANCE {
            return Err(Error::InitialProbability {
                total,
                tolerance: INIT_TOLERANCE,
            });
        }
        let n_steps = settings.n_steps();
        let mut state = self.state(init)?;
        observer.on_step(&self.diagnostics(&state, 0, 0.0, 0.0))?;
        observer.on_snapshot(0, 0.0, &state.grid)?;
        for k in 0..n_steps {
            let t = k as f64 * settings.dt;
            let start = Instant::now();
            state = self.step(state, t).map_err(|e| match e {
                Error::NonFinite { context, .. } => Error::NonFinite { step: k + 1, context },
                other => other,
            })?;
            if let Some(idx) = state.grid.first_non_finite() {
                return Err(Error::NonFinite {
                    step: k + 1,
                    context: format!("density at flat index {idx}"),
                });
            }
            let ms = start.elapsed().as_secs_f64() * 1e3;
            let step = k + 1;
            let t_next = step as f64 * settings.dt;
            observer.on_step(&self.diagnostics(&state, step, t_next, ms))?;
            if step % settings.snapshot_stride == 0 || step == n_steps {
                observer.on_snapshot(step, t_next, &state.grid)?;
            }
        }
        Ok(state)
    }

    fn diagnostics(&self, s: &PropagationState, step: usize, t: f64, wall_ms: f64) -> StepDiagnostics {
        StepDiagnostics {
            step,
            t,
            total_probability: s.grid.total_probability(self.ws),
            min_density: s.grid.min(),
            max_density: s.grid.max(),
            high_band_fraction: s.coeffs.high_band_fraction(),
            wall_ms,
        }
    }
}

impl std::fmt::Debug for Propagator<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Propagator")
            .field("continuous", &self.continuous)
            .field("order", &self.order)
            .finish_non_exhaustive()
    }
}
