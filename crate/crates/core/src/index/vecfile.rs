//! Binary vector block: little-endian, row-major `f32` with a fixed header.
//!
//! ```text
//! magic    8 bytes  "MRAGVEC\0"
//! version  u32
//! dim      u32
//! count    u64
//! tag_len  u32, followed by tag_len bytes of UTF-8 (embedder tag)
//! data     count * dim * f32
//! ```

use std::io::Write;
use std::path::Path;

use super::IndexError;

pub(crate) const MAGIC: &[u8; 8] = b"MRAGVEC\0";
pub(crate) const VERSION: u32 = 1;

pub(crate) fn write(path: &Path, tag: &str, dim: usize, data: &[f32]) -> Result<(), IndexError> {
    let count = data.len().checked_div(dim).unwrap_or(0);
    let mut buf = Vec::with_capacity(28 + tag.len() + data.len() * 4);
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.extend_from_slice(&(dim as u32).to_le_bytes());
    buf.extend_from_slice(&(count as u64).to_le_bytes());
    buf.extend_from_slice(&(tag.len() as u32).to_le_bytes());
    buf.extend_from_slice(tag.as_bytes());
    for x in data {
        buf.extend_from_slice(&x.to_le_bytes());
    }
    let mut f = std::fs::File::create(path)?;
    f.write_all(&buf)?;
    f.flush()?;
    Ok(())
}

pub(crate) struct VecBlock {
    pub tag: String,
    pub dim: usize,
    pub count: usize,
    pub data: Vec<f32>,
}

pub(crate) fn read(path: &Path) -> Result<VecBlock, IndexError> {
    let name = path.display().to_string();
    let bytes = std::fs::read(path)?;
    let truncated = || IndexError::Truncated(name.clone());
    let mut pos = 0usize;
    let mut take = |n: usize| -> Result<&[u8], IndexError> {
        let s = bytes.get(pos..pos + n).ok_or_else(truncated)?;
        pos += n;
        Ok(s)
    };
    if take(8)? != MAGIC {
        return Err(IndexError::BadMagic(name));
    }
    let version = u32::from_le_bytes(take(4)?.try_into().unwrap());
    if version != VERSION {
        return Err(IndexError::Version {
            found: version,
            expected: VERSION,
        });
    }
    let dim = u32::from_le_bytes(take(4)?.try_into().unwrap()) as usize;
    let count = u64::from_le_bytes(take(8)?.try_into().unwrap()) as usize;
    let tag_len = u32::from_le_bytes(take(4)?.try_into().unwrap()) as usize;
    let tag = String::from_utf8(take(tag_len)?.to_vec())
        .map_err(|_| IndexError::Format(format!("{name}: tag is not UTF-8")))?;
    let n = count
        .checked_mul(dim)
        .and_then(|n| n.checked_mul(4))
        .ok_or_else(truncated)?;
    let body = take(n)?;
    let data = body
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
        .collect();
    if pos != bytes.len() {
        return Err(IndexError::Truncated(name));
    }
    Ok(VecBlock {
        tag,
        dim,
        count,
        data,
    })
}
