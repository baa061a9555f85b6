//! Binary embedding container.
//!
//! Layout: `b"MCEB"`, version byte `0x01`, little-endian `u32` row count,
//! little-endian `u32` dim, then `rows × dim` little-endian `f32`, row-major.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

pub const CONTAINER_MAGIC: &[u8; 4] = b"MCEB";
pub const CONTAINER_VERSION: u8 = 0x01;
const HEADER_LEN: usize = 4 + 1 + 4 + 4;

pub fn write_container(path: &Path, dim: usize, data: &[f32]) -> Result<()> {
    let bytes = encode(dim, data).map_err(|detail| Error::Format {
        path: path.to_path_buf(),
        detail,
    })?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Reads a container, rejecting non-finite entries. Returns `(dim, data)`.
pub fn read_container(path: &Path) -> Result<(usize, Vec<f32>)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let (dim, data) = decode(&bytes).map_err(|detail| Error::Format {
        path: path.to_path_buf(),
        detail,
    })?;
    if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite {
            path: path.to_path_buf(),
            row: pos / dim.max(1),
            col: pos % dim.max(1),
        });
    }
    Ok((dim, data))
}

pub(crate) fn encode(dim: usize, data: &[f32]) -> Result<Vec<u8>, String> {
    if dim == 0 && !data.is_empty() {
        return Err("dim 0 with non-empty data".into());
    }
    let rows = data.len().checked_div(dim).unwrap_or(0);
    if rows * dim != data.len() {
        return Err(format!("{} values is not a multiple of dim {dim}", data.len()));
    }
    let rows32 = u32::try_from(rows).map_err(|_| "row count exceeds u32".to_string())?;
    let dim32 = u32::try_from(dim).map_err(|_| "dim exceeds u32".to_string())?;
    let mut out = Vec::with_capacity(HEADER_LEN + data.len() * 4);
    out.extend_from_slice(CONTAINER_MAGIC);
    out.push(CONTAINER_VERSION);
    out.extend_from_slice(&rows32.to_le_bytes());
    out.extend_from_slice(&dim32.to_le_bytes());
    for v in data {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

pub(crate) fn decode(bytes: &[u8]) -> Result<(usize, Vec<f32>), String> {
    if bytes.len() < HEADER_LEN {
        return Err(format!("{} bytes is shorter than the header", bytes.len()));
    }
    if &bytes[..4] != CONTAINER_MAGIC {
        return Err("bad magic, expected MCEB".into());
    }
    if bytes[4] != CONTAINER_VERSION {
        return Err(format!("unsupported version {:#04x}", bytes[4]));
    }
    let rows = u32::from_le_bytes(bytes[5..9].try_into().unwrap()) as usize;
    let dim = u32::from_le_bytes(bytes[9..13].try_into().unwrap()) as usize;
    let expected = rows
        .checked_mul(dim)
        .and_then(|n| n.checked_mul(4))
        .ok_or("header sizes overflow")?;
    let body = &bytes[HEADER_LEN..];
    if body.len() != expected {
        return Err(format!(
            "header declares {rows}x{dim} ({expected} bytes) but body has {} bytes",
            body.len()
        ));
    }
    let data = body
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok((dim, data))
}
