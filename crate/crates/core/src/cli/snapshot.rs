//! `LFP1` density snapshots: the magic bytes, a little-endian header
//! `(l0: u64, n0: u64, L: f64, N_s: u64, t: f64)`, then the grid values as
//! little-endian `f64` in `(s, nu1, nu2, nu3, mu1, mu2)` row-major order.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::harmonic::{BandLimit, GridDensity};

pub const SNAPSHOT_MAGIC: &[u8; 4] = b"LFP1";
pub const HEADER_LEN: usize = 4 + 5 * 8;

/// A density with its timestamp.
#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub t: f64,
    pub density: GridDensity,
}

pub fn write_snapshot(w: &mut impl Write, t: f64, p: &GridDensity) -> Result<()> {
    let band = p.band();
    w.write_all(SNAPSHOT_MAGIC)?;
    w.write_all(&(band.l0() as u64).to_le_bytes())?;
    w.write_all(&(band.n0() as u64).to_le_bytes())?;
    w.write_all(&band.half_width().to_le_bytes())?;
    w.write_all(&(p.n_modes() as u64).to_le_bytes())?;
    w.write_all(&t.to_le_bytes())?;
    for v in p.as_slice() {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

pub fn read_snapshot(r: &mut impl Read) -> Result<Snapshot> {
    let mut header = [0u8; HEADER_LEN];
    r.read_exact(&mut header)
        .map_err(|e| Error::Snapshot(format!("truncated header: {e}")))?;
    if &header[..4] != SNAPSHOT_MAGIC {
        return Err(Error::Snapshot(format!("bad magic {:?}", &header[..4])));
    }
    let word = |i: usize| -> [u8; 8] { header[4 + 8 * i..12 + 8 * i].try_into().unwrap() };
    let to_usize = |v: u64, what: &str| usize::try_from(v).map_err(|_| Error::Snapshot(format!("{what} = {v} too large")));
    let l0 = to_usize(u64::from_le_bytes(word(0)), "l0")?;
    let n0 = to_usize(u64::from_le_bytes(word(1)), "n0")?;
    let half_width = f64::from_le_bytes(word(2));
    let n_modes = to_usize(u64::from_le_bytes(word(3)), "N_s")?;
    let t = f64::from_le_bytes(word(4));
    let band = BandLimit::new(l0, n0, half_width).map_err(|e| Error::Snapshot(e.to_string()))?;
    let len = band
        .grid_len()
        .checked_mul(n_modes)
        .ok_or_else(|| Error::Snapshot("grid size overflows".into()))?;
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    if bytes.len() != 8 * len {
        return Err(Error::Snapshot(format!(
            "expected {} data bytes for l0={l0}, n0={n0}, N_s={n_modes}, found {}",
            8 * len,
            bytes.len()
        )));
    }
    let data = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    let density = GridDensity::from_vec(band, n_modes, data).map_err(|e| Error::Snapshot(e.to_string()))?;
    Ok(Snapshot { t, density })
}

pub fn save_snapshot(path: &Path, t: f64, p: &GridDensity) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_snapshot(&mut w, t, p)?;
    w.flush()?;
    Ok(())
}

pub fn load_snapshot(path: &Path) -> Result<Snapshot> {
    let file = File::open(path).map_err(|e| Error::Snapshot(format!("{}: {e}", path.display())))?;
    read_snapshot(&mut BufReader::new(file))
}
