//! DALF feature files.
//!
//! ```text
//! "DALF" | version u32 | rows u64 | dim u32 | rows×dim f32
//! ```
//!
//! All fields little-endian; values row-major.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{DalError, Result};

pub const FEATURE_MAGIC: [u8; 4] = *b"DALF";
pub const FEATURE_VERSION: u32 = 1;
const HEADER_LEN: usize = 4 + 4 + 8 + 4;

pub fn write_features(path: &Path, dim: usize, values: &[f32]) -> Result<()> {
    if dim == 0 || !values.len().is_multiple_of(dim) {
        return Err(DalError::DimensionMismatch { expected: dim, found: values.len() });
    }
    let mut buf = Vec::with_capacity(HEADER_LEN + 4 * values.len());
    buf.extend_from_slice(&FEATURE_MAGIC);
    buf.extend_from_slice(&FEATURE_VERSION.to_le_bytes());
    buf.extend_from_slice(&((values.len() / dim) as u64).to_le_bytes());
    buf.extend_from_slice(&(dim as u32).to_le_bytes());
    for v in values {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    let mut f = fs::File::create(path)?;
    f.write_all(&buf)?;
    f.sync_all()?;
    Ok(())
}

/// Returns `(dim, row-major values)`.
pub fn read_features(path: &Path) -> Result<(usize, Vec<f32>)> {
    parse_features(&fs::read(path)?)
}

pub(crate) fn parse_features(bytes: &[u8]) -> Result<(usize, Vec<f32>)> {
    if bytes.len() < HEADER_LEN {
        if bytes.len() >= 4 && bytes[..4] != FEATURE_MAGIC {
            return Err(DalError::BadMagic {
                offset: 0,
                expected: FEATURE_MAGIC,
                found: bytes[..4].try_into().unwrap(),
            });
        }
        return Err(DalError::TruncatedFile { offset: bytes.len() as u64, what: "feature header" });
    }
    let magic: [u8; 4] = bytes[0..4].try_into().unwrap();
    if magic != FEATURE_MAGIC {
        return Err(DalError::BadMagic { offset: 0, expected: FEATURE_MAGIC, found: magic });
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != FEATURE_VERSION {
        return Err(DalError::VersionMismatch { offset: 4, expected: FEATURE_VERSION, found: version });
    }
    let rows = u64::from_le_bytes(bytes[8..16].try_into().unwrap());
    let dim = u32::from_le_bytes(bytes[16..20].try_into().unwrap()) as usize;
    if dim == 0 {
        return Err(DalError::Malformed { offset: 16, what: "feature dimension 0".into() });
    }
    let payload = &bytes[HEADER_LEN..];
    let row_bytes = 4 * dim as u64;
    let expected = rows.checked_mul(row_bytes);
    if expected != Some(payload.len() as u64) {
        return Err(DalError::RowCountMismatch {
            declared: rows,
            found: payload.len() as u64 / row_bytes,
            what: "feature payload",
        });
    }
    let mut values = Vec::with_capacity(payload.len() / 4);
    for (i, chunk) in payload.chunks_exact(4).enumerate() {
        let v = f32::from_le_bytes(chunk.try_into().unwrap());
        if !v.is_finite() {
            return Err(DalError::NonFiniteFeature {
                row: i / dim,
                column: i % dim,
                offset: (HEADER_LEN + 4 * i) as u64,
            });
        }
        values.push(v);
    }
    Ok((dim, values))
}
