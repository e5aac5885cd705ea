//! Binary matrix (`MHX1`) and packed code (`MHC1`) files.
//!
//! ```text
//! MHX1: "MHX1" | dtype u32 LE (1 = f64) | rows u64 LE | cols u64 LE | rows*cols f64 LE, row-major
//! MHC1: "MHC1" | bits u32 LE | count u64 LE | count*ceil(bits/64) u64 LE words
//! ```

use std::fs;
use std::io::Write;
use std::path::Path;

use nalgebra::DMatrix;

use crate::codec::{words_per_code, PackedCodes};
use crate::error::{Error, Result};

pub const MATRIX_MAGIC: &[u8; 4] = b"MHX1";
pub const CODES_MAGIC: &[u8; 4] = b"MHC1";
pub const DTYPE_F64: u32 = 1;
pub const MATRIX_HEADER_LEN: usize = 24;
pub const CODES_HEADER_LEN: usize = 16;

/// Writes `bytes` to a temporary file next to `path` and renames it into
/// place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io(dir, e))?;
    tmp.write_all(bytes).map_err(|e| Error::io(path, e))?;
    tmp.as_file().sync_all().map_err(|e| Error::io(path, e))?;
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}

pub fn encode_matrix(m: &DMatrix<f64>) -> Vec<u8> {
    let (rows, cols) = m.shape();
    let mut out = Vec::with_capacity(MATRIX_HEADER_LEN + rows * cols * 8);
    out.extend_from_slice(MATRIX_MAGIC);
    out.extend_from_slice(&DTYPE_F64.to_le_bytes());
    out.extend_from_slice(&(rows as u64).to_le_bytes());
    out.extend_from_slice(&(cols as u64).to_le_bytes());
    for i in 0..rows {
        for j in 0..cols {
            out.extend_from_slice(&m[(i, j)].to_le_bytes());
        }
    }
    out
}

fn magic_str(bytes: &[u8]) -> String {
    String::from_utf8_lossy(bytes).into_owned()
}

fn u32_at(bytes: &[u8], at: usize) -> u32 {
    u32::from_le_bytes(bytes[at..at + 4].try_into().unwrap())
}

fn u64_at(bytes: &[u8], at: usize) -> u64 {
    u64::from_le_bytes(bytes[at..at + 8].try_into().unwrap())
}

fn check_len(path: &Path, actual: usize, expected: u64) -> Result<()> {
    let actual = actual as u64;
    if actual < expected {
        return Err(Error::TruncatedFile {
            path: path.into(),
            expected,
            actual,
        });
    }
    if actual > expected {
        return Err(Error::TrailingBytes {
            path: path.into(),
            expected,
            actual,
        });
    }
    Ok(())
}

pub fn decode_matrix(path: &Path, bytes: &[u8]) -> Result<DMatrix<f64>> {
    if bytes.len() < 4 || &bytes[..4] != MATRIX_MAGIC {
        return Err(Error::BadMagic {
            path: path.into(),
            expected: magic_str(MATRIX_MAGIC),
            found: magic_str(&bytes[..bytes.len().min(4)]),
        });
    }
    if bytes.len() < MATRIX_HEADER_LEN {
        return Err(Error::TruncatedFile {
            path: path.into(),
            expected: MATRIX_HEADER_LEN as u64,
            actual: bytes.len() as u64,
        });
    }
    let dtype = u32_at(bytes, 4);
    if dtype != DTYPE_F64 {
        return Err(Error::UnsupportedDtype {
            path: path.into(),
            dtype,
        });
    }
    let rows = u64_at(bytes, 8);
    let cols = u64_at(bytes, 16);
    let expected = rows
        .checked_mul(cols)
        .and_then(|v| v.checked_mul(8))
        .and_then(|v| v.checked_add(MATRIX_HEADER_LEN as u64))
        .ok_or_else(|| Error::TruncatedFile {
            path: path.into(),
            expected: u64::MAX,
            actual: bytes.len() as u64,
        })?;
    check_len(path, bytes.len(), expected)?;
    let (rows, cols) = (rows as usize, cols as usize);
    let payload = &bytes[MATRIX_HEADER_LEN..];
    Ok(DMatrix::from_fn(rows, cols, |i, j| {
        let at = (i * cols + j) * 8;
        f64::from_le_bytes(payload[at..at + 8].try_into().unwrap())
    }))
}

pub fn write_matrix(path: impl AsRef<Path>, m: &DMatrix<f64>) -> Result<()> {
    write_atomic(path.as_ref(), &encode_matrix(m))
}

pub fn read_matrix(path: impl AsRef<Path>) -> Result<DMatrix<f64>> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_matrix(path, &bytes)
}

/// Only the header: `(rows, cols)`.
pub fn read_matrix_shape(path: impl AsRef<Path>) -> Result<(usize, usize)> {
    use std::io::Read;
    let path = path.as_ref();
    let mut header = [0u8; MATRIX_HEADER_LEN];
    let mut f = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    f.read_exact(&mut header).map_err(|e| Error::io(path, e))?;
    if &header[..4] != MATRIX_MAGIC {
        return Err(Error::BadMagic {
            path: path.into(),
            expected: magic_str(MATRIX_MAGIC),
            found: magic_str(&header[..4]),
        });
    }
    Ok((u64_at(&header, 8) as usize, u64_at(&header, 16) as usize))
}

pub fn encode_codes(codes: &PackedCodes) -> Vec<u8> {
    let mut out = Vec::with_capacity(CODES_HEADER_LEN + codes.words().len() * 8);
    out.extend_from_slice(CODES_MAGIC);
    out.extend_from_slice(&(codes.bits() as u32).to_le_bytes());
    out.extend_from_slice(&(codes.len() as u64).to_le_bytes());
    for w in codes.words() {
        out.extend_from_slice(&w.to_le_bytes());
    }
    out
}

pub fn decode_codes(path: &Path, bytes: &[u8]) -> Result<PackedCodes> {
    if bytes.len() < 4 || &bytes[..4] != CODES_MAGIC {
        return Err(Error::BadMagic {
            path: path.into(),
            expected: magic_str(CODES_MAGIC),
            found: magic_str(&bytes[..bytes.len().min(4)]),
        });
    }
    if bytes.len() < CODES_HEADER_LEN {
        return Err(Error::TruncatedFile {
            path: path.into(),
            expected: CODES_HEADER_LEN as u64,
            actual: bytes.len() as u64,
        });
    }
    let bits = u32_at(bytes, 4) as usize;
    let count = u64_at(bytes, 8);
    let per = words_per_code(bits) as u64;
    let expected = count
        .checked_mul(per * 8)
        .and_then(|v| v.checked_add(CODES_HEADER_LEN as u64))
        .ok_or_else(|| Error::TruncatedFile {
            path: path.into(),
            expected: u64::MAX,
            actual: bytes.len() as u64,
        })?;
    check_len(path, bytes.len(), expected)?;
    let words = bytes[CODES_HEADER_LEN..]
        .chunks_exact(8)
        .map(|c| u64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    PackedCodes::from_words(bits, count as usize, words).map_err(|e| Error::InvalidCodes {
        path: path.into(),
        reason: e.to_string(),
    })
}

pub fn write_codes(path: impl AsRef<Path>, codes: &PackedCodes) -> Result<()> {
    write_atomic(path.as_ref(), &encode_codes(codes))
}

pub fn read_codes(path: impl AsRef<Path>) -> Result<PackedCodes> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_codes(path, &bytes)
}
