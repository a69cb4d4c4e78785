//! CSV tables with fixed headers. Floats are written in Rust's shortest
//! round-trip form, so a table read back reproduces the values exactly.

use std::io::{Read, Write};

use nalgebra::{Matrix3, Vector3};

use crate::error::{Error, Result};
use crate::splitting::StepDiagnostics;
use crate::stats::{Marginals, MomentDifference, MomentSummary};

pub const DIAGNOSTICS_HEADER: [&str; 5] = ["t", "ptotal", "pmin", "alias", "stepms"];

pub const MOMENTS_HEADER: [&str; 19] = [
    "t", "mR11", "mR12", "mR13", "mR21", "mR22", "mR23", "mR31", "mR32", "mR33", "b3x", "b3y", "b3z", "dispR1",
    "dispR2", "mO1", "mO2", "sO1", "sO2",
];

/// Angles in radians; the remaining columns are `a - b` of the moment with
/// the same name.
pub const DIFFERENCES_HEADER: [&str; 9] = ["t", "angR", "angb3", "dispR1", "dispR2", "mO1", "mO2", "sO1", "sO2"];

pub const B3_HEADER: [&str; 3] = ["alpha", "beta", "value"];

/// Top-left cell of the angular-velocity matrix: rows are `omega1`,
/// columns `omega2`.
pub const OMEGA_CORNER: &str = "omega1\\omega2";

fn csv_err(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        kind => Error::Csv(format!("{kind:?}")),
    }
}

/// Shortest round-trip representation, in exponent form outside
/// `[1e-4, 1e15)` so tiny values stay short.
fn format_f64(v: f64) -> String {
    let a = v.abs();
    if a == 0.0 || !a.is_finite() || (1e-4..1e15).contains(&a) {
        v.to_string()
    } else {
        format!("{v:e}")
    }
}

fn fields(values: &[f64]) -> Vec<String> {
    values.iter().map(|&v| format_f64(v)).collect()
}

fn writer<W: Write>(w: W, header: &[&str]) -> Result<csv::Writer<W>> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(header).map_err(csv_err)?;
    Ok(out)
}

/// Streams diagnostics rows as they are produced.
pub struct DiagnosticsWriter<W: Write> {
    inner: csv::Writer<W>,
}

impl<W: Write> DiagnosticsWriter<W> {
    pub fn new(w: W) -> Result<Self> {
        Ok(Self {
            inner: writer(w, &DIAGNOSTICS_HEADER)?,
        })
    }

    pub fn write(&mut self, d: &StepDiagnostics) -> Result<()> {
        let row = [d.t, d.total_probability, d.min_density, d.high_band_fraction, d.wall_ms];
        self.inner.write_record(fields(&row)).map_err(csv_err)
    }

    pub fn flush(&mut self) -> Result<()> {
        Ok(self.inner.flush()?)
    }
}

/// One diagnostics row as read back from disk.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DiagnosticsRow {
    pub t: f64,
    pub ptotal: f64,
    pub pmin: f64,
    pub alias: f64,
    pub stepms: f64,
}

fn moment_row(m: &MomentSummary) -> [f64; 19] {
    let r = &m.mean_r;
    [
        m.t,
        r[(0, 0)],
        r[(0, 1)],
        r[(0, 2)],
        r[(1, 0)],
        r[(1, 1)],
        r[(1, 2)],
        r[(2, 0)],
        r[(2, 1)],
        r[(2, 2)],
        m.mean_b3[0],
        m.mean_b3[1],
        m.mean_b3[2],
        m.att_dispersion[0],
        m.att_dispersion[1],
        m.mean_omega[0],
        m.mean_omega[1],
        m.std_omega[0],
        m.std_omega[1],
    ]
}

pub fn write_moments(w: impl Write, rows: &[MomentSummary]) -> Result<()> {
    let mut out = writer(w, &MOMENTS_HEADER)?;
    for m in rows {
        out.write_record(fields(&moment_row(m))).map_err(csv_err)?;
    }
    Ok(out.flush()?)
}

pub fn write_differences(w: impl Write, rows: &[MomentDifference]) -> Result<()> {
    let mut out = writer(w, &DIFFERENCES_HEADER)?;
    for d in rows {
        let row = [
            d.t,
            d.attitude_angle,
            d.b3_angle,
            d.att_dispersion[0],
            d.att_dispersion[1],
            d.mean_omega[0],
            d.mean_omega[1],
            d.std_omega[0],
            d.std_omega[1],
        ];
        out.write_record(fields(&row)).map_err(csv_err)?;
    }
    Ok(out.flush()?)
}

/// Reads a table whose header must equal `header`, returning numeric rows.
fn read_table(r: impl Read, header: &[&str]) -> Result<Vec<Vec<f64>>> {
    let mut rd = csv::Reader::from_reader(r);
    let found = rd.headers().map_err(csv_err)?.clone();
    if found.iter().ne(header.iter().copied()) {
        return Err(Error::Csv(format!(
            "header `{}` does not match `{}`",
            found.iter().collect::<Vec<_>>().join(","),
            header.join(",")
        )));
    }
    rd.records()
        .enumerate()
        .map(|(i, rec)| {
            let rec = rec.map_err(csv_err)?;
            rec.iter()
                .map(|f| {
                    f.trim()
                        .parse::<f64>()
                        .map_err(|e| Error::Csv(format!("row {}: `{f}`: {e}", i + 1)))
                })
                .collect()
        })
        .collect()
}

pub fn read_moments(r: impl Read) -> Result<Vec<MomentSummary>> {
    read_table(r, &MOMENTS_HEADER)?
        .into_iter()
        .map(|v| {
            let mean_r = Matrix3::new(v[1], v[2], v[3], v[4], v[5], v[6], v[7], v[8], v[9]);
            Ok(MomentSummary {
                t: v[0],
                mean_r,
                mean_b3: Vector3::new(v[10], v[11], v[12]),
                att_dispersion: [v[13], v[14]],
                mean_omega: [v[15], v[16]],
                std_omega: [v[17], v[18]],
                ill_conditioned: false,
            })
        })
        .collect()
}

pub fn read_diagnostics(r: impl Read) -> Result<Vec<DiagnosticsRow>> {
    Ok(read_table(r, &DIAGNOSTICS_HEADER)?
        .into_iter()
        .map(|v| DiagnosticsRow {
            t: v[0],
            ptotal: v[1],
            pmin: v[2],
            alias: v[3],
            stepms: v[4],
        })
        .collect())
}

/// `b3` marginal as `(alpha, beta, value)` triples over the sphere grid.
pub fn write_b3_marginal(w: impl Write, m: &Marginals) -> Result<()> {
    let mut out = writer(w, &B3_HEADER)?;
    let n = m.beta.len();
    for (i, alpha) in m.alpha.iter().enumerate() {
        for (j, beta) in m.beta.iter().enumerate() {
            out.write_record(fields(&[*alpha, *beta, m.b3[i * n + j]])).map_err(csv_err)?;
        }
    }
    Ok(out.flush()?)
}

/// Angular-velocity marginal as a dense matrix: the header row holds the
/// `omega2` axis and each row starts with its `omega1` value.
pub fn write_omega_marginal(w: impl Write, m: &Marginals) -> Result<()> {
    let axis = &m.omega_axis;
    let mut header = vec![OMEGA_CORNER.to_string()];
    header.extend(fields(axis));
    let mut out = csv::Writer::from_writer(w);
    out.write_record(&header).map_err(csv_err)?;
    for (i, o1) in axis.iter().enumerate() {
        let mut row = vec![format_f64(*o1)];
        row.extend(fields(&m.omega[i * axis.len()..(i + 1) * axis.len()]));
        out.write_record(&row).map_err(csv_err)?;
    }
    Ok(out.flush()?)
}
