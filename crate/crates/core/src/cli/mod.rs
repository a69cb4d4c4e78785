//! Command-line driver: configuration, run orchestration and exports.
//!
//! Exit codes: 0 success, 1 other failure (I/O, malformed inputs),
//! 2 configuration error, 3 numerical failure.

pub mod config;
pub mod export;
pub mod snapshot;

use std::ffi::OsString;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

use crate::error::{Error, Result};
use crate::harmonic::{BandLimit, GridDensity, HarmonicWorkspace};
use crate::model::GshsModel;
use crate::montecarlo::run_ensemble;
use crate::pendulum::Pendulum;
use crate::splitting::{Observer, Propagator, StepDiagnostics};
use crate::stats::{self, MomentSummary};

pub use config::RunConfig;
use export::DiagnosticsWriter;

pub const EXIT_FAILURE: u8 = 1;
pub const EXIT_CONFIG: u8 = 2;
pub const EXIT_NUMERICAL: u8 = 3;

pub const DIAGNOSTICS_FILE: &str = "diagnostics.csv";
pub const MOMENTS_FILE: &str = "moments.csv";
pub const MC_MOMENTS_FILE: &str = "mc_moments.csv";
pub const DIFFERENCES_FILE: &str = "differences.csv";
pub const RESOLVED_CONFIG_FILE: &str = "config.resolved.toml";
pub const SNAPSHOT_DIR: &str = "snapshots";
pub const SNAPSHOT_EXT: &str = "lfp";

#[derive(Debug, Parser)]
#[command(name = "liefp", version, about = "Density propagation for the colliding 3D pendulum on SO(3) x T^2")]
pub struct Cli {
    /// Worker threads for the parallel sections (default: all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Propagate the density with the spectral solver.
    Propagate {
        #[arg(long)]
        config: PathBuf,
        /// Output directory, overriding `output_dir`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Simulate a Monte Carlo ensemble on the same time grid.
    Montecarlo {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Ensemble seed, overriding `mc.seed`.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Difference two moment tables (`a - b`).
    Compare {
        spectral: PathBuf,
        mc: PathBuf,
        /// Difference table path (default: next to the spectral table).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write b3 and angular-velocity marginals of stored snapshots.
    ExportMarginals {
        /// A snapshot file or a directory of snapshots.
        #[arg(long)]
        snapshot: PathBuf,
        /// Comma-separated times; the nearest stored snapshot is used for
        /// each. Without it every snapshot is exported.
        #[arg(long, value_delimiter = ',')]
        times: Vec<f64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Check a configuration and print it fully resolved.
    Validate {
        #[arg(long)]
        config: PathBuf,
    },
}

/// Maps an error to the process exit code.
pub fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_)
        | Error::ConfigNotFound(_)
        | Error::InvalidParameter(_)
        | Error::InvalidBandLimit(_)
        | Error::MemoryCeiling { .. }
        | Error::Unsupported(_) => EXIT_CONFIG,
        Error::NonFinite { .. }
        | Error::ProbabilityDrift { .. }
        | Error::JumpStepTooLarge { .. }
        | Error::NegativeModelValue { .. }
        | Error::InitialProbability { .. } => EXIT_NUMERICAL,
        _ => EXIT_FAILURE,
    }
}

/// Parses `args` (including the program name), runs the command and
/// returns the exit code. Errors are reported on stderr.
pub fn main_with_args<I, T>(args: I) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { 0 };
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

pub fn run(cli: Cli) -> Result<()> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(Error::Config("--threads must be at least 1".into()));
        }
        if rayon::ThreadPoolBuilder::new().num_threads(n).build_global().is_err() {
            log::warn!("thread pool already initialized; --threads {n} ignored");
        }
    }
    match cli.command {
        Command::Propagate { config, out } => {
            let mut cfg = RunConfig::load(&config)?;
            if let Some(out) = out {
                cfg.output_dir = out;
            }
            cmd_propagate(&cfg).map(|_| ())
        }
        Command::Montecarlo { config, out, seed } => {
            let mut cfg = RunConfig::load(&config)?;
            if let Some(out) = out {
                cfg.output_dir = out;
            }
            if let Some(seed) = seed {
                cfg.mc.seed = seed;
            }
            cmd_montecarlo(&cfg).map(|_| ())
        }
        Command::Compare { spectral, mc, out } => {
            let out = out.unwrap_or_else(|| spectral.with_file_name(DIFFERENCES_FILE));
            cmd_compare(&spectral, &mc, &out).map(|_| ())
        }
        Command::ExportMarginals { snapshot, times, out } => {
            let out = out.unwrap_or_else(|| {
                if snapshot.is_dir() {
                    snapshot.clone()
                } else {
                    snapshot.parent().map(Path::to_path_buf).unwrap_or_default()
                }
            });
            cmd_export_marginals(&snapshot, &times, &out).map(|_| ())
        }
        Command::Validate { config } => {
            let cfg = RunConfig::load(&config)?;
            Pendulum::new(cfg.pendulum.clone(), cfg.collisions).map_err(|e| Error::Config(e.to_string()))?;
            print!("{}", cfg.to_toml()?);
            Ok(())
        }
    }
}

pub fn snapshot_path(dir: &Path, step: usize) -> PathBuf {
    dir.join(format!("snap_{step:06}.{SNAPSHOT_EXT}"))
}

/// Writes diagnostics as they arrive and snapshots plus moments at
/// snapshot steps.
struct RunWriter<'a> {
    ws: &'a HarmonicWorkspace,
    diagnostics: DiagnosticsWriter<BufWriter<File>>,
    snapshot_dir: Option<PathBuf>,
    moments: Vec<MomentSummary>,
    max_drift: f64,
}

impl Observer for RunWriter<'_> {
    fn on_step(&mut self, d: &StepDiagnostics) -> Result<()> {
        self.max_drift = self.max_drift.max((d.total_probability - 1.0).abs());
        self.diagnostics.write(d)
    }

    fn on_snapshot(&mut self, step: usize, t: f64, density: &GridDensity) -> Result<()> {
        if let Some(dir) = &self.snapshot_dir {
            snapshot::save_snapshot(&snapshot_path(dir, step), t, density)?;
        }
        let m = stats::density_moments(density, self.ws, t);
        if m.ill_conditioned {
            log::warn!("mean attitude is ill-conditioned at t = {t}");
        }
        if m.att_dispersion.iter().any(|d| d.is_nan()) {
            log::warn!("attitude dispersion undefined at t = {t}: negative density lobes dominate the second moment");
        }
        self.moments.push(m);
        log::info!(
            "t = {t:.4}: b3 = [{:.3}, {:.3}, {:.3}], mean omega = [{:.3}, {:.3}]",
            m.mean_b3[0],
            m.mean_b3[1],
            m.mean_b3[2],
            m.mean_omega[0],
            m.mean_omega[1]
        );
        Ok(())
    }
}

/// Outcome of a spectral run.
#[derive(Debug, Clone, PartialEq)]
pub struct PropagateReport {
    pub moments: Vec<MomentSummary>,
    pub max_probability_drift: f64,
    pub output_dir: PathBuf,
}

fn write_resolved_config(cfg: &RunConfig) -> Result<()> {
    fs::write(cfg.output_dir.join(RESOLVED_CONFIG_FILE), cfg.to_toml()?)?;
    Ok(())
}

fn build_workspace(band: BandLimit) -> Result<HarmonicWorkspace> {
    HarmonicWorkspace::build(band).map_err(|e| match e {
        Error::MemoryCeiling { .. } | Error::InvalidBandLimit(_) => Error::Config(e.to_string()),
        other => other,
    })
}

fn pendulum(cfg: &RunConfig) -> Result<Pendulum> {
    Pendulum::new(cfg.pendulum.clone(), cfg.collisions).map_err(|e| Error::Config(e.to_string()))
}

pub fn cmd_propagate(cfg: &RunConfig) -> Result<PropagateReport> {
    cfg.validate()?;
    let model = pendulum(cfg)?;
    let ws = build_workspace(cfg.band_limit()?)?;
    fs::create_dir_all(&cfg.output_dir)?;
    write_resolved_config(cfg)?;
    let snapshot_dir = if cfg.write_snapshots {
        let dir = cfg.output_dir.join(SNAPSHOT_DIR);
        fs::create_dir_all(&dir)?;
        Some(dir)
    } else {
        None
    };

    let propagator =
        Propagator::new(&ws, &model, cfg.integrator, cfg.dt)?.with_drift_threshold(cfg.drift_threshold);
    let jumps = propagator.jumps();
    log::info!(
        "band l0={} n0={}, {} steps, {} active attitudes, {} kernel entries",
        cfg.band.l0,
        cfg.band.n0,
        cfg.run_settings().n_steps(),
        jumps.active_attitudes().len(),
        jumps.nnz()
    );
    let init = model.initial_density(&ws)?;
    let diagnostics = DiagnosticsWriter::new(BufWriter::new(File::create(cfg.output_dir.join(DIAGNOSTICS_FILE))?))?;
    let mut writer = RunWriter {
        ws: &ws,
        diagnostics,
        snapshot_dir,
        moments: Vec::new(),
        max_drift: 0.0,
    };
    let result = propagator.run(init, &cfg.run_settings(), &mut writer);
    writer.diagnostics.flush()?;
    result?;
    let mut file = BufWriter::new(File::create(cfg.output_dir.join(MOMENTS_FILE))?);
    export::write_moments(&mut file, &writer.moments)?;
    file.flush()?;
    println!(
        "propagated to t = {}; max |total probability - 1| = {:.3e}; outputs in {}",
        cfg.t_final,
        writer.max_drift,
        cfg.output_dir.display()
    );
    Ok(PropagateReport {
        moments: writer.moments,
        max_probability_drift: writer.max_drift,
        output_dir: cfg.output_dir.clone(),
    })
}

pub fn cmd_montecarlo(cfg: &RunConfig) -> Result<Vec<MomentSummary>> {
    cfg.validate()?;
    let model = pendulum(cfg)?;
    fs::create_dir_all(&cfg.output_dir)?;
    let result = run_ensemble(&model, &cfg.mc_config())?;
    let mut file = BufWriter::new(File::create(cfg.output_dir.join(MC_MOMENTS_FILE))?);
    export::write_moments(&mut file, &result.summaries)?;
    file.flush()?;
    println!(
        "simulated {} samples (seed {}): {} jumps, {} window violations; outputs in {}",
        cfg.mc.n_samples,
        cfg.mc.seed,
        result.jumps,
        result.window_violations,
        cfg.output_dir.display()
    );
    Ok(result.summaries)
}

fn read_moments_file(path: &Path) -> Result<Vec<MomentSummary>> {
    let file = File::open(path).map_err(|e| Error::Csv(format!("{}: {e}", path.display())))?;
    export::read_moments(BufReader::new(file)).map_err(|e| match e {
        Error::Csv(msg) => Error::Csv(format!("{}: {msg}", path.display())),
        other => other,
    })
}

pub fn cmd_compare(spectral: &Path, mc: &Path, out: &Path) -> Result<Vec<stats::MomentDifference>> {
    let a = read_moments_file(spectral)?;
    let b = read_moments_file(mc)?;
    let diffs = stats::compare(&a, &b)?;
    let mut file = BufWriter::new(File::create(out)?);
    export::write_differences(&mut file, &diffs)?;
    file.flush()?;
    let m = stats::max_differences(&diffs);
    println!("max over {} snapshots:", diffs.len());
    println!("  mean attitude angle  {:.4} deg", m.attitude_angle.to_degrees());
    println!("  mean b3 angle        {:.4} deg", m.b3_angle.to_degrees());
    println!("  dispersion           [{:.4e}, {:.4e}]", m.att_dispersion[0], m.att_dispersion[1]);
    println!("  mean omega           [{:.4e}, {:.4e}]", m.mean_omega[0], m.mean_omega[1]);
    println!("  std omega            [{:.4e}, {:.4e}]", m.std_omega[0], m.std_omega[1]);
    Ok(diffs)
}

fn snapshot_files(path: &Path) -> Result<Vec<PathBuf>> {
    if !path.is_dir() {
        return Ok(vec![path.to_path_buf()]);
    }
    let mut files: Vec<PathBuf> = fs::read_dir(path)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == SNAPSHOT_EXT))
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(Error::Snapshot(format!("no .{SNAPSHOT_EXT} files in {}", path.display())));
    }
    Ok(files)
}

/// Writes `b3_t<t>.csv` and `omega_t<t>.csv` for each selected snapshot
/// and returns the paths written.
pub fn cmd_export_marginals(snapshot: &Path, times: &[f64], out: &Path) -> Result<Vec<PathBuf>> {
    let mut snaps = Vec::new();
    for f in snapshot_files(snapshot)? {
        snaps.push(snapshot::load_snapshot(&f)?);
    }
    let selected: Vec<usize> = if times.is_empty() {
        (0..snaps.len()).collect()
    } else {
        times
            .iter()
            .map(|&t| {
                let (i, s) = snaps
                    .iter()
                    .enumerate()
                    .min_by(|a, b| (a.1.t - t).abs().total_cmp(&(b.1.t - t).abs()))
                    .expect("at least one snapshot");
                if (s.t - t).abs() > 1e-9 {
                    log::warn!("no snapshot at t = {t}; using t = {}", s.t);
                }
                i
            })
            .collect()
    };
    fs::create_dir_all(out)?;
    let mut workspaces: Vec<HarmonicWorkspace> = Vec::new();
    let mut written = Vec::new();
    for i in selected {
        let s = &snaps[i];
        let band = s.density.band();
        let ws = match workspaces.iter().position(|w| w.band() == band) {
            Some(k) => &workspaces[k],
            None => {
                workspaces.push(build_workspace(band)?);
                workspaces.last().unwrap()
            }
        };
        let m = stats::marginals(&s.density, ws);
        let b3 = out.join(format!("b3_t{:.4}.csv", s.t));
        let omega = out.join(format!("omega_t{:.4}.csv", s.t));
        let mut f = BufWriter::new(File::create(&b3)?);
        export::write_b3_marginal(&mut f, &m)?;
        f.flush()?;
        let mut f = BufWriter::new(File::create(&omega)?);
        export::write_omega_marginal(&mut f, &m)?;
        f.flush()?;
        written.push(b3);
        written.push(omega);
    }
    println!("wrote {} marginal files to {}", written.len(), out.display());
    Ok(written)
}
