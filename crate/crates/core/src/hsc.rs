//! HSC1 tensor container.
//!
//! ```text
//! offset  size        field
//! 0       4           magic "HSC1"
//! 4       4           rank r, u32 little-endian
//! 8       4·r         extents, u32 little-endian each
//! 8+4r    4·∏extents  f32 little-endian payload, row-major
//! ```
//!
//! Nothing may follow the payload.

use std::io::Write;
use std::path::Path;

use ndtensor::Tensor;

use crate::error::{MgirError, Result};

pub const MAGIC: &[u8; 4] = b"HSC1";
/// Ranks above this are treated as corruption.
pub const MAX_RANK: usize = 16;

fn format_err(offset: usize, detail: impl Into<String>) -> MgirError {
    MgirError::Format {
        kind: "HSC1",
        offset,
        detail: detail.into(),
    }
}

pub fn to_bytes(t: &Tensor<f32>) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + 4 * t.rank() + 4 * t.numel());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(t.rank() as u32).to_le_bytes());
    for &e in t.shape() {
        out.extend_from_slice(&(e as u32).to_le_bytes());
    }
    for &v in t.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

fn read_u32(bytes: &[u8], at: usize, what: &str) -> Result<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_le_bytes(b.try_into().unwrap()))
        .ok_or_else(|| format_err(at, format!("truncated {what}")))
}

/// Decodes one tensor from the front of `bytes`, returning it and the number
/// of bytes consumed. Offsets in errors are relative to `base`.
pub fn decode_prefix(bytes: &[u8], base: usize) -> Result<(Tensor<f32>, usize)> {
    let err = |at: usize, msg: String| format_err(base + at, msg);
    match bytes.get(..4) {
        Some(m) if m == MAGIC => {}
        Some(m) => return Err(err(0, format!("bad magic {m:?}"))),
        None => return Err(err(0, "truncated magic".into())),
    }
    let rank = read_u32(bytes, 4, "rank").map_err(|_| err(4, "truncated rank".into()))? as usize;
    if rank > MAX_RANK {
        return Err(err(4, format!("rank {rank} exceeds {MAX_RANK}")));
    }
    let mut shape = Vec::with_capacity(rank);
    let mut numel: usize = 1;
    for i in 0..rank {
        let at = 8 + 4 * i;
        let e = read_u32(bytes, at, "extent").map_err(|_| err(at, "truncated extent".into()))? as usize;
        numel = numel.checked_mul(e).ok_or_else(|| err(at, "element count overflows".into()))?;
        shape.push(e);
    }
    let start = 8 + 4 * rank;
    let len = numel.checked_mul(4).ok_or_else(|| err(start, "payload size overflows".into()))?;
    let available = bytes.len().saturating_sub(start);
    if available < len {
        return Err(err(
            start + available,
            format!("payload truncated: {numel} floats need {len} bytes, {available} present"),
        ));
    }
    let data = bytes[start..start + len]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok((Tensor::new(shape, data)?, start + len))
}

pub fn from_bytes(bytes: &[u8]) -> Result<Tensor<f32>> {
    let (t, used) = decode_prefix(bytes, 0)?;
    if used != bytes.len() {
        return Err(format_err(used, format!("{} trailing bytes", bytes.len() - used)));
    }
    Ok(t)
}

pub fn read(path: impl AsRef<Path>) -> Result<Tensor<f32>> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| MgirError::io(path, e))?;
    from_bytes(&bytes).map_err(|e| match e {
        MgirError::Format { kind, offset, detail } => MgirError::Format {
            kind,
            offset,
            detail: format!("{detail} (in {})", path.display()),
        },
        other => other,
    })
}

pub fn write(path: impl AsRef<Path>, t: &Tensor<f32>) -> Result<()> {
    write_atomic(path, &to_bytes(t))
}

/// Writes through a temporary file in the destination directory and renames
/// it into place, so readers never observe a partial file.
pub fn write_atomic(path: impl AsRef<Path>, bytes: &[u8]) -> Result<()> {
    let path = path.as_ref();
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| MgirError::io(dir, e))?;
    tmp.write_all(bytes).map_err(|e| MgirError::io(tmp.path(), e))?;
    tmp.as_file().sync_all().map_err(|e| MgirError::io(tmp.path(), e))?;
    tmp.persist(path).map_err(|e| MgirError::io(path, e.error))?;
    Ok(())
}
