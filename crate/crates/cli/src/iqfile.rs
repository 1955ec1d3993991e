//! Binary IQ matrix files.
//!
//! Layout: magic `PBRIQ1`, row count (u32 LE), column count (u32 LE), sample
//! rate (f64 LE), then row-major interleaved re/im as f32 LE. Payload size is
//! exactly rows x cols x 8 bytes.

use anyhow::{bail, Context};
use num_complex::Complex64;
use pbr_core::scenario::{ArrayData, ArrayGeometry};
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

pub const MAGIC: &[u8; 6] = b"PBRIQ1";

pub fn write(path: &Path, data: &ArrayData) -> anyhow::Result<()> {
    let rows = data.rows();
    let cols = data.num_antennas();
    if rows > u32::MAX as usize || cols > u32::MAX as usize {
        bail!("matrix dimensions {rows}x{cols} exceed the file format");
    }
    let file = std::fs::File::create(path)
        .with_context(|| format!("cannot create {}", path.display()))?;
    let mut w = BufWriter::new(file);
    w.write_all(MAGIC)?;
    w.write_all(&(rows as u32).to_le_bytes())?;
    w.write_all(&(cols as u32).to_le_bytes())?;
    w.write_all(&data.sample_rate.to_le_bytes())?;
    for t in 0..rows {
        for l in 0..cols {
            let v = data.matrix[[t, l]];
            w.write_all(&(v.re as f32).to_le_bytes())?;
            w.write_all(&(v.im as f32).to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Read an IQ matrix; the array geometry is supplied by the caller since the
/// file only stores dimensions and sample rate.
pub fn read(path: &Path, geometry: ArrayGeometry) -> anyhow::Result<ArrayData> {
    let file =
        std::fs::File::open(path).with_context(|| format!("cannot open {}", path.display()))?;
    let mut r = BufReader::new(file);
    let mut magic = [0u8; 6];
    r.read_exact(&mut magic)
        .with_context(|| format!("{} is too short for a header", path.display()))?;
    if &magic != MAGIC {
        bail!("{} is not an IQ matrix file (bad magic)", path.display());
    }
    let mut b4 = [0u8; 4];
    r.read_exact(&mut b4)?;
    let rows = u32::from_le_bytes(b4) as usize;
    r.read_exact(&mut b4)?;
    let cols = u32::from_le_bytes(b4) as usize;
    let mut b8 = [0u8; 8];
    r.read_exact(&mut b8)?;
    let sample_rate = f64::from_le_bytes(b8);
    if cols != geometry.num_antennas {
        bail!(
            "{} holds {cols} antenna columns but the config declares {}",
            path.display(),
            geometry.num_antennas
        );
    }

    let mut payload = Vec::new();
    r.read_to_end(&mut payload)?;
    let expect = rows * cols * 8;
    if payload.len() != expect {
        bail!(
            "{}: payload is {} bytes, expected {expect} for {rows}x{cols}",
            path.display(),
            payload.len()
        );
    }
    let mut data = ArrayData::zeros(rows, sample_rate, geometry);
    let mut off = 0usize;
    for t in 0..rows {
        for l in 0..cols {
            let re = f32::from_le_bytes(payload[off..off + 4].try_into().unwrap());
            let im = f32::from_le_bytes(payload[off + 4..off + 8].try_into().unwrap());
            data.matrix[[t, l]] = Complex64::new(re as f64, im as f64);
            off += 8;
        }
    }
    Ok(data)
}
