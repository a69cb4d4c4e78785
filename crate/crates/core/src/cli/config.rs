//! Run configuration: shipped defaults, a TOML file merged on top, then
//! `LIEFP_*` environment overrides.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use toml::{Table, Value};

use crate::continuous::Integrator;
use crate::error::{Error, Result};
use crate::harmonic::BandLimit;
use crate::montecarlo::McConfig;
use crate::pendulum::PendulumParams;
use crate::splitting::RunSettings;

/// Prefix of environment overrides. Nested keys are joined with `__`, e.g.
/// `LIEFP_BAND__L0=8` or `LIEFP_PENDULUM__LAMBDA_MAX=50`.
pub const ENV_PREFIX: &str = "LIEFP_";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BandConfig {
    pub l0: usize,
    pub n0: usize,
}

impl Default for BandConfig {
    fn default() -> Self {
        Self { l0: 10, n0: 10 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MonteCarloConfig {
    pub n_samples: usize,
    pub seed: u64,
    /// Euler-Maruyama steps per spectral `dt`; the first-order sampler
    /// needs a finer step than the spectral solver to act as a reference.
    pub substeps: usize,
}

impl Default for MonteCarloConfig {
    fn default() -> Self {
        Self {
            n_samples: 100_000,
            seed: 1,
            substeps: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub dt: f64,
    pub t_final: f64,
    pub snapshot_stride: usize,
    pub collisions: bool,
    pub integrator: Integrator,
    pub output_dir: PathBuf,
    /// Largest tolerated change of total probability in one continuous step.
    pub drift_threshold: f64,
    /// Write a binary density snapshot at every snapshot step.
    pub write_snapshots: bool,
    pub band: BandConfig,
    pub pendulum: PendulumParams,
    pub mc: MonteCarloConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            dt: 0.0025,
            t_final: 1.0,
            snapshot_stride: 40,
            collisions: true,
            integrator: Integrator::Rk4,
            output_dir: PathBuf::from("out"),
            drift_threshold: 1e-6,
            write_snapshots: true,
            band: BandConfig::default(),
            pendulum: PendulumParams::default(),
            mc: MonteCarloConfig::default(),
        }
    }
}

impl RunConfig {
    /// Loads `path` over the defaults and applies the process environment.
    pub fn load(path: &Path) -> Result<Self> {
        Self::load_with_env(path, std::env::vars())
    }

    pub fn load_with_env(path: &Path, env: impl IntoIterator<Item = (String, String)>) -> Result<Self> {
        let text = match std::fs::read_to_string(path) {
            Ok(t) => t,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
                return Err(Error::ConfigNotFound(path.to_path_buf()));
            }
            Err(e) => return Err(Error::Config(format!("{}: {e}", path.display()))),
        };
        Self::from_toml_with_env(&text, env).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn from_toml_with_env(text: &str, env: impl IntoIterator<Item = (String, String)>) -> Result<Self> {
        let file: Table = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        let mut tree = Table::try_from(Self::default()).map_err(|e| Error::Config(e.to_string()))?;
        merge(&mut tree, file);
        for (key, value) in env {
            if let Some(rest) = key.strip_prefix(ENV_PREFIX) {
                apply_override(&mut tree, rest, &value)?;
            }
        }
        let cfg: Self = tree.try_into().map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Checks everything that can be checked without building a workspace.
    pub fn validate(&self) -> Result<()> {
        let invalid = |e: Error| Error::Config(e.to_string());
        self.band_limit()?;
        self.run_settings().validate().map_err(invalid)?;
        self.pendulum.validate().map_err(invalid)?;
        if !(self.drift_threshold > 0.0) {
            return Err(Error::Config(format!(
                "drift_threshold must be positive, got {}",
                self.drift_threshold
            )));
        }
        self.mc_config().validate().map_err(invalid)
    }

    pub fn band_limit(&self) -> Result<BandLimit> {
        BandLimit::new(self.band.l0, self.band.n0, self.pendulum.half_width).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn run_settings(&self) -> RunSettings {
        RunSettings {
            dt: self.dt,
            t_final: self.t_final,
            snapshot_stride: self.snapshot_stride,
        }
    }

    /// Monte Carlo settings sharing the time grid of the spectral run, so
    /// both moment tables have the same timestamps.
    pub fn mc_config(&self) -> McConfig {
        McConfig {
            n_samples: self.mc.n_samples,
            dt: self.dt,
            t_final: self.t_final,
            seed: self.mc.seed,
            snapshot_stride: self.snapshot_stride,
            substeps: self.mc.substeps,
            window: self.pendulum.half_width,
        }
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }
}

fn merge(base: &mut Table, over: Table) {
    for (k, v) in over {
        match (base.get_mut(&k), v) {
            (Some(Value::Table(b)), Value::Table(o)) => merge(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

/// Sets `path` (segments separated by `__`, matched case-insensitively)
/// to `raw`, parsed as a TOML value when possible and as a string
/// otherwise.
fn apply_override(tree: &mut Table, path: &str, raw: &str) -> Result<()> {
    let segments: Vec<&str> = path.split("__").collect();
    let mut table = tree;
    for (i, seg) in segments.iter().enumerate() {
        let key = table
            .keys()
            .find(|k| k.eq_ignore_ascii_case(seg))
            .cloned()
            .ok_or_else(|| Error::Config(format!("unknown override {ENV_PREFIX}{path}")))?;
        if i + 1 == segments.len() {
            let value = parse_value(raw);
            table.insert(key, value);
            return Ok(());
        }
        table = match table.get_mut(&key) {
            Some(Value::Table(t)) => t,
            _ => return Err(Error::Config(format!("{ENV_PREFIX}{path}: `{key}` is not a table"))),
        };
    }
    Err(Error::Config(format!("empty override key {ENV_PREFIX}{path}")))
}

fn parse_value(raw: &str) -> Value {
    format!("v = {raw}")
        .parse::<Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| Value::String(raw.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn env(pairs: &[(&str, &str)]) -> Vec<(String, String)> {
        pairs.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect()
    }

    #[test]
    fn empty_file_gives_defaults() {
        let cfg = RunConfig::from_toml_with_env("", env(&[])).unwrap();
        assert_eq!(cfg, RunConfig::default());
    }

    #[test]
    fn defaults_round_trip_through_toml() {
        let text = RunConfig::default().to_toml().unwrap();
        assert_eq!(RunConfig::from_toml_with_env(&text, env(&[])).unwrap(), RunConfig::default());
    }

    #[test]
    fn file_values_override_defaults() {
        let text = "dt = 0.005\ncollisions = false\nintegrator = \"euler\"\n[band]\nl0 = 8\nn0 = 6\n[pendulum]\nlambda_max = 50.0\n";
        let cfg = RunConfig::from_toml_with_env(text, env(&[])).unwrap();
        assert_eq!(cfg.dt, 0.005);
        assert!(!cfg.collisions);
        assert_eq!(cfg.integrator, Integrator::Euler);
        assert_eq!(cfg.band, BandConfig { l0: 8, n0: 6 });
        assert_eq!(cfg.pendulum.lambda_max, 50.0);
        assert_eq!(cfg.pendulum.epsilon, PendulumParams::default().epsilon);
    }

    #[test]
    fn env_overrides_win_and_ignore_case() {
        let cfg = RunConfig::from_toml_with_env(
            "[band]\nl0 = 8\nn0 = 8\n",
            env(&[
                ("LIEFP_BAND__L0", "6"),
                ("LIEFP_PENDULUM__J1", "0.02"),
                ("LIEFP_OUTPUT_DIR", "elsewhere"),
                ("LIEFP_INTEGRATOR", "euler"),
                ("UNRELATED", "x"),
            ]),
        )
        .unwrap();
        assert_eq!(cfg.band.l0, 6);
        assert_eq!(cfg.pendulum.j1, 0.02);
        assert_eq!(cfg.output_dir, PathBuf::from("elsewhere"));
        assert_eq!(cfg.integrator, Integrator::Euler);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(matches!(
            RunConfig::from_toml_with_env("bogus = 1\n", env(&[])),
            Err(Error::Config(_))
        ));
        assert!(matches!(
            RunConfig::from_toml_with_env("[pendulum]\nmass = 1.0\n", env(&[])),
            Err(Error::Config(_))
        ));
        assert!(matches!(
            RunConfig::from_toml_with_env("", env(&[("LIEFP_NOPE", "1")])),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn invalid_values_are_config_errors() {
        for text in ["dt = -1.0\n", "t_final = 0.001\n", "[pendulum]\nepsilon = 2.0\n", "[band]\nl0 = 0\nn0 = 4\n"] {
            assert!(matches!(RunConfig::from_toml_with_env(text, env(&[])), Err(Error::Config(_))), "{text}");
        }
    }

    #[test]
    fn missing_file_names_the_path() {
        let path = Path::new("/definitely/not/here.toml");
        let err = RunConfig::load_with_env(path, env(&[])).unwrap_err();
        assert!(matches!(err, Error::ConfigNotFound(_)));
        assert!(err.to_string().contains("/definitely/not/here.toml"));
    }
}
