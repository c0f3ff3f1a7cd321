//! `VLMG1` binary matrix files.
//!
//! Layout: magic `VLMG`, `u32` version (1), `u64` rows, `u64` cols, then
//! `rows * cols` little-endian `f32` values in row-major order. All integers
//! are little-endian. Values are widened on load.

use std::io::{Read, Write};
use std::path::Path;

use super::Matrix;
use crate::{Error, Result, Scalar};

pub const MAGIC: [u8; 4] = *b"VLMG";
pub const VERSION: u32 = 1;
const HEADER_LEN: usize = 4 + 4 + 8 + 8;

pub fn encode<T: Scalar>(m: &Matrix<T>) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + 4 * m.data().len());
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(m.rows() as u64).to_le_bytes());
    out.extend_from_slice(&(m.cols() as u64).to_le_bytes());
    for &x in m.data() {
        out.extend_from_slice(&(x.as_f64() as f32).to_le_bytes());
    }
    out
}

pub fn decode<T: Scalar>(bytes: &[u8]) -> Result<Matrix<T>> {
    if bytes.len() < HEADER_LEN {
        return Err(Error::Format(format!("truncated header ({} bytes)", bytes.len())));
    }
    if bytes[..4] != MAGIC {
        return Err(Error::Format("bad magic".into()));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != VERSION {
        return Err(Error::Format(format!("unsupported version {version}")));
    }
    let rows = u64::from_le_bytes(bytes[8..16].try_into().unwrap());
    let cols = u64::from_le_bytes(bytes[16..24].try_into().unwrap());
    let count = rows
        .checked_mul(cols)
        .and_then(|n| usize::try_from(n).ok())
        .ok_or_else(|| Error::Format("shape overflows".into()))?;
    let body = &bytes[HEADER_LEN..];
    if body.len() != count * 4 {
        return Err(Error::Format(format!(
            "expected {} payload bytes, found {}",
            count * 4,
            body.len()
        )));
    }
    let data = body
        .chunks_exact(4)
        .map(|c| T::lit(f32::from_le_bytes(c.try_into().unwrap()) as f64))
        .collect();
    Matrix::new(rows as usize, cols as usize, data)
}

pub fn write<T: Scalar>(m: &Matrix<T>, mut w: impl Write) -> Result<()> {
    w.write_all(&encode(m))?;
    Ok(())
}

pub fn read<T: Scalar>(mut r: impl Read) -> Result<Matrix<T>> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    decode(&bytes)
}

pub fn save<T: Scalar>(m: &Matrix<T>, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, encode(m))?;
    Ok(())
}

pub fn load<T: Scalar>(path: impl AsRef<Path>) -> Result<Matrix<T>> {
    decode(&std::fs::read(path)?)
}
