//! The `SGT1` tensor container.
//!
//! Layout (all little-endian):
//!
//! ```text
//! b"SGT1" | rows: u32 | cols: u32 | rows * cols f32 values, row-major
//! ```
//!
//! Feature matrices are stored one per file; checkpoints embed the same
//! layout once per named tensor.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::{Array2, ArrayView2};

use crate::error::{Error, Result};

pub const SGT_MAGIC: &[u8; 4] = b"SGT1";

pub fn write_sgt<W: Write>(w: &mut W, t: ArrayView2<'_, f32>) -> Result<()> {
    let (rows, cols) = t.dim();
    let rows32 = u32::try_from(rows).map_err(|_| Error::Container("too many rows".into()))?;
    let cols32 = u32::try_from(cols).map_err(|_| Error::Container("too many columns".into()))?;
    w.write_all(SGT_MAGIC)?;
    w.write_all(&rows32.to_le_bytes())?;
    w.write_all(&cols32.to_le_bytes())?;
    let mut buf = Vec::with_capacity(rows * cols * 4);
    for v in t.iter() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    w.write_all(&buf)?;
    Ok(())
}

pub fn read_sgt<R: Read>(r: &mut R) -> Result<Array2<f32>> {
    let mut magic = [0u8; 4];
    read_exact(r, &mut magic, "magic")?;
    if &magic != SGT_MAGIC {
        return Err(Error::Container(format!(
            "bad magic {:?}, expected {:?}",
            String::from_utf8_lossy(&magic),
            "SGT1"
        )));
    }
    let rows = read_u32(r, "row count")? as usize;
    let cols = read_u32(r, "column count")? as usize;
    let n = rows
        .checked_mul(cols)
        .ok_or_else(|| Error::Container("dimension overflow".into()))?;
    let mut bytes = vec![0u8; n * 4];
    read_exact(r, &mut bytes, "tensor data")?;
    let data: Vec<f32> = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    Array2::from_shape_vec((rows, cols), data).map_err(|e| Error::Container(e.to_string()))
}

pub fn save_sgt(path: &Path, t: ArrayView2<'_, f32>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_sgt(&mut w, t)?;
    w.flush()?;
    Ok(())
}

pub fn load_sgt(path: &Path) -> Result<Array2<f32>> {
    let mut r = BufReader::new(File::open(path)?);
    read_sgt(&mut r)
}

pub(crate) fn read_u32<R: Read>(r: &mut R, what: &str) -> Result<u32> {
    let mut b = [0u8; 4];
    read_exact(r, &mut b, what)?;
    Ok(u32::from_le_bytes(b))
}

pub(crate) fn read_exact<R: Read>(r: &mut R, buf: &mut [u8], what: &str) -> Result<()> {
    r.read_exact(buf).map_err(|e| {
        if e.kind() == std::io::ErrorKind::UnexpectedEof {
            Error::Container(format!("truncated while reading {what}"))
        } else {
            Error::Io(e)
        }
    })
}

/// Lossless for values that are already representable in `f32`.
pub fn to_f32(a: ArrayView2<'_, f64>) -> Array2<f32> {
    a.mapv(|v| v as f32)
}

pub fn to_f64(a: ArrayView2<'_, f32>) -> Array2<f64> {
    a.mapv(f64::from)
}
