//! `FOGW` weight files.
//!
//! Layout, all integers little-endian `u32`:
//!
//! ```text
//! "FOGW" | version | tensor count | { name len | UTF-8 name | rank | dims.. | f32 LE values.. }*
//! ```

use super::Tensor;
use crate::error::{Error, Result};
use crate::fsutil::write_atomic;
use std::path::Path;

pub const MAGIC: &[u8; 4] = b"FOGW";
pub const FORMAT_VERSION: u32 = 1;

pub type NamedTensor = (String, Tensor<f32>);

pub fn encode(entries: &[NamedTensor]) -> Vec<u8> {
    let payload: usize = entries.iter().map(|(n, t)| 12 + n.len() + 4 * t.shape().len() + 4 * t.numel()).sum();
    let mut out = Vec::with_capacity(12 + payload);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(entries.len() as u32).to_le_bytes());
    for (name, t) in entries {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
        for &d in t.shape() {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for &v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Cursor<'a> {
    fn err(&self, reason: impl Into<String>) -> Error {
        Error::Malformed {
            path: self.path.to_path_buf(),
            offset: self.pos as u64,
            reason: reason.into(),
        }
    }

    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(self.err(format!("truncated while reading {what}")));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}

/// Parses a checkpoint image; `path` is only used in error messages.
pub fn decode(bytes: &[u8], path: &Path) -> Result<Vec<NamedTensor>> {
    let mut cur = Cursor { bytes, pos: 0, path };
    if cur.take(4, "magic")? != MAGIC {
        cur.pos = 0;
        return Err(cur.err("missing FOGW magic"));
    }
    let version = cur.u32("format version")?;
    if version != FORMAT_VERSION {
        cur.pos -= 4;
        return Err(cur.err(format!("unsupported format version {version}")));
    }
    let count = cur.u32("tensor count")?;
    let mut out = Vec::with_capacity(count.min(4096) as usize);
    for _ in 0..count {
        let name_len = cur.u32("name length")? as usize;
        let start = cur.pos;
        let raw_name = cur.take(name_len, "name")?;
        let name = match std::str::from_utf8(raw_name) {
            Ok(n) => n.to_owned(),
            Err(_) => {
                cur.pos = start;
                return Err(cur.err("tensor name is not UTF-8"));
            }
        };
        let rank = cur.u32("rank")? as usize;
        let mut shape = Vec::with_capacity(rank.min(16));
        for _ in 0..rank {
            shape.push(cur.u32("dimension")? as usize);
        }
        let numel = shape
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .filter(|&n| n > 0 && n <= (bytes.len() - cur.pos) / 4)
            .ok_or_else(|| cur.err(format!("tensor `{name}` shape {shape:?} exceeds file")))?;
        let raw = cur.take(4 * numel, "values")?;
        let data = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        out.push((name, Tensor::new(shape, data)?));
    }
    if cur.pos != bytes.len() {
        return Err(cur.err("trailing bytes after last tensor"));
    }
    Ok(out)
}

pub fn save(path: &Path, entries: &[NamedTensor]) -> Result<()> {
    write_atomic(path, &encode(entries))
}

pub fn load(path: &Path) -> Result<Vec<NamedTensor>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes, path)
}
