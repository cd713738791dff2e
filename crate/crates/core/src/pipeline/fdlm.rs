//! `FDLM` binary matrices: a 16-byte header (`"FDLM"`, version, dtype,
//! two reserved bytes, little-endian `u32` rows and cols) followed by the
//! row-major little-endian `f64` payload.

use std::io::{Read, Write};
use std::path::Path;

use nalgebra::DMatrix;

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"FDLM";
pub const VERSION: u8 = 1;
pub const DTYPE_F64: u8 = 1;
const HEADER: usize = 16;

pub fn write_fdlm<W: Write>(m: &DMatrix<f64>, mut out: W) -> Result<()> {
    let rows = u32::try_from(m.nrows()).map_err(|_| Error::InvalidArgument("too many rows for FDLM".into()))?;
    let cols = u32::try_from(m.ncols()).map_err(|_| Error::InvalidArgument("too many columns for FDLM".into()))?;
    let mut buf = Vec::with_capacity(HEADER + 8 * m.len());
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&[VERSION, DTYPE_F64, 0, 0]);
    buf.extend_from_slice(&rows.to_le_bytes());
    buf.extend_from_slice(&cols.to_le_bytes());
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            buf.extend_from_slice(&m[(i, j)].to_le_bytes());
        }
    }
    out.write_all(&buf)?;
    Ok(())
}

pub fn read_fdlm<R: Read>(mut input: R) -> Result<DMatrix<f64>> {
    let mut bytes = Vec::new();
    input.read_to_end(&mut bytes)?;
    decode(&bytes)
}

pub fn decode(bytes: &[u8]) -> Result<DMatrix<f64>> {
    if bytes.len() < HEADER {
        return Err(Error::Data(format!("FDLM: truncated header, {} bytes", bytes.len())));
    }
    if &bytes[..4] != MAGIC {
        return Err(Error::Data("FDLM: bad magic at byte 0".into()));
    }
    if bytes[4] != VERSION {
        return Err(Error::Data(format!("FDLM: unsupported version {} at byte 4", bytes[4])));
    }
    if bytes[5] != DTYPE_F64 {
        return Err(Error::Data(format!("FDLM: unsupported dtype {} at byte 5", bytes[5])));
    }
    let word = |o: usize| u32::from_le_bytes([bytes[o], bytes[o + 1], bytes[o + 2], bytes[o + 3]]) as usize;
    let (rows, cols) = (word(8), word(12));
    let need = HEADER + 8 * rows * cols;
    if bytes.len() != need {
        return Err(Error::Data(format!(
            "FDLM: {rows}x{cols} needs {need} bytes, file has {}",
            bytes.len()
        )));
    }
    let values = bytes[HEADER..]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes([c[0], c[1], c[2], c[3], c[4], c[5], c[6], c[7]]));
    Ok(DMatrix::from_row_iterator(rows, cols, values))
}

pub fn save(m: &DMatrix<f64>, path: &Path) -> Result<()> {
    write_fdlm(m, std::io::BufWriter::new(std::fs::File::create(path)?))
}

pub fn load(path: &Path) -> Result<DMatrix<f64>> {
    read_fdlm(std::fs::File::open(path)?)
}
