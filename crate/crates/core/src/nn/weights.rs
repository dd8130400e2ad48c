//! AMFW binary weight files.
//!
//! Layout, all integers little-endian `u32`:
//!
//! ```text
//! "AMFW" | version (1 byte) | c0 | r | count
//! count x { name_len | name (UTF-8) | rank | dims... | f32 data }
//! CRC32 of every preceding byte
//! ```

use std::fs;
use std::path::Path;

use indexmap::IndexMap;

use super::{ArchConfig, ModelParams};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"AMFW";
pub const VERSION: u8 = 1;

fn put_u32(buf: &mut Vec<u8>, v: usize) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| Error::Weights(format!("value {v} exceeds u32")))?;
    buf.extend_from_slice(&v.to_le_bytes());
    Ok(())
}

/// Serializes parameters (running statistics included) into AMFW bytes.
pub fn write_weights(params: &ModelParams<f32>) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.push(VERSION);
    put_u32(&mut buf, params.arch.base_channels)?;
    put_u32(&mut buf, params.arch.ca_reduction)?;
    put_u32(&mut buf, params.len())?;
    for (name, t) in params.iter() {
        put_u32(&mut buf, name.len())?;
        buf.extend_from_slice(name.as_bytes());
        put_u32(&mut buf, t.shape().len())?;
        for &d in t.shape() {
            put_u32(&mut buf, d)?;
        }
        for v in t.data() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    let crc = crc32fast::hash(&buf);
    buf.extend_from_slice(&crc.to_le_bytes());
    Ok(buf)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::Weights(format!("truncated while reading {what}")))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<usize> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as usize)
    }
}

/// Parses AMFW bytes. `image_side` and `attention` are not stored and come from `template`.
pub fn read_weights(bytes: &[u8], template: ArchConfig) -> Result<ModelParams<f32>> {
    if bytes.len() < MAGIC.len() + 1 + 12 + 4 {
        return Err(Error::Weights("file too short".into()));
    }
    if &bytes[..4] != MAGIC {
        return Err(Error::Weights("bad magic, not an AMFW file".into()));
    }
    if bytes[4] != VERSION {
        return Err(Error::Weights(format!("unsupported version {}", bytes[4])));
    }
    let (body, tail) = bytes.split_at(bytes.len() - 4);
    let stored = u32::from_le_bytes([tail[0], tail[1], tail[2], tail[3]]);
    let actual = crc32fast::hash(body);
    if stored != actual {
        return Err(Error::Weights(format!(
            "CRC mismatch: stored {stored:08x}, computed {actual:08x}"
        )));
    }

    let mut r = Reader { bytes: body, pos: 5 };
    let arch = ArchConfig {
        base_channels: r.u32("c0")?,
        ca_reduction: r.u32("reduction")?,
        ..template
    };
    let count = r.u32("tensor count")?;
    let mut tensors = IndexMap::with_capacity(count.min(1024));
    for _ in 0..count {
        let len = r.u32("name length")?;
        let name = std::str::from_utf8(r.take(len, "name")?)
            .map_err(|_| Error::Weights("tensor name is not UTF-8".into()))?
            .to_string();
        let rank = r.u32("rank")?;
        let mut shape = Vec::with_capacity(rank.min(8));
        for _ in 0..rank {
            shape.push(r.u32("dimension")?);
        }
        let numel = shape
            .iter()
            .try_fold(1usize, |a, &d| a.checked_mul(d))
            .and_then(|n| n.checked_mul(4))
            .ok_or_else(|| Error::Weights(format!("tensor {name} is too large")))?;
        let raw = r.take(numel, &name)?;
        let data = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        let t = Tensor::new(&shape, data)
            .map_err(|e| Error::Weights(format!("tensor {name}: {e}")))?;
        if tensors.insert(name.clone(), t).is_some() {
            return Err(Error::Weights(format!("duplicate tensor {name}")));
        }
    }
    if r.pos != body.len() {
        return Err(Error::Weights(format!(
            "{} trailing bytes before checksum",
            body.len() - r.pos
        )));
    }
    ModelParams::from_tensors(arch, tensors)
}

pub fn save_weights(params: &ModelParams<f32>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = write_weights(params)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn load_weights(path: impl AsRef<Path>, template: ArchConfig) -> Result<ModelParams<f32>> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    read_weights(&bytes, template).map_err(|e| match e {
        Error::Weights(m) => Error::Weights(format!("{}: {m}", path.display())),
        other => other,
    })
}
