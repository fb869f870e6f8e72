//! Binary weight checkpoints.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "ENET"  u32 version  u32 len + variant name
//! u32 tensor count
//! per tensor: u32 len + name, u32 rank, u32 extent * rank, u64 byte offset into the data section
//! data section: f32 values of every tensor, back to back
//! ```

use std::path::Path;

use crate::error::{Error, Result};
use crate::fsutil::{read_file, write_atomic};
use crate::model::{build, ModelGraph, Variant, Weights};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"ENET";
pub const VERSION: u32 = 1;

fn malformed(detail: impl Into<String>) -> Error {
    Error::Format {
        what: "checkpoint",
        detail: detail.into(),
    }
}

fn put_u32(out: &mut Vec<u8>, v: usize) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| malformed(format!("{v} exceeds u32")))?;
    out.extend_from_slice(&v.to_le_bytes());
    Ok(())
}

fn put_str(out: &mut Vec<u8>, s: &str) -> Result<()> {
    put_u32(out, s.len())?;
    out.extend_from_slice(s.as_bytes());
    Ok(())
}

pub fn encode_checkpoint(variant: Variant, weights: &Weights<f32>) -> Result<Vec<u8>> {
    let named = weights.named_tensors();
    let mut out = Vec::with_capacity(64 + 4 * weights.param_count());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    put_str(&mut out, variant.name())?;
    put_u32(&mut out, named.len())?;
    let mut offset = 0u64;
    for (name, t) in &named {
        put_str(&mut out, name)?;
        put_u32(&mut out, t.shape().len())?;
        for &d in t.shape() {
            put_u32(&mut out, d)?;
        }
        out.extend_from_slice(&offset.to_le_bytes());
        offset += 4 * t.len() as u64;
    }
    for (_, t) in &named {
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| {
                malformed(format!(
                    "truncated at byte {} (wanted {n} more of {})",
                    self.pos,
                    self.bytes.len()
                ))
            })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<usize> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as usize)
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn string(&mut self) -> Result<String> {
        let n = self.u32()?;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| malformed("name is not UTF-8"))
    }
}

/// Decoded checkpoint contents, before matching against a graph.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub variant: Variant,
    pub tensors: Vec<(String, Tensor<f32>)>,
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Checkpoint> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(malformed("missing ENET magic"));
    }
    let version = r.u32()? as u32;
    if version != VERSION {
        return Err(Error::Version {
            what: "checkpoint",
            found: version,
            supported: VERSION,
        });
    }
    let variant: Variant = r.string()?.parse()?;
    let count = r.u32()?;
    let mut table = Vec::with_capacity(count.min(1024));
    for _ in 0..count {
        let name = r.string()?;
        let rank = r.u32()?;
        let shape = (0..rank).map(|_| r.u32()).collect::<Result<Vec<_>>>()?;
        let offset = r.u64()?;
        table.push((name, shape, offset));
    }
    let data = &bytes[r.pos..];
    let mut expected_offset = 0u64;
    let mut tensors = Vec::with_capacity(table.len());
    for (name, shape, offset) in table {
        if offset != expected_offset {
            return Err(malformed(format!(
                "`{name}` at offset {offset}, expected {expected_offset}"
            )));
        }
        let len: usize = shape.iter().product();
        let start = usize::try_from(offset).map_err(|_| malformed("offset overflow"))?;
        let raw = data
            .get(start..start + 4 * len)
            .ok_or_else(|| malformed(format!("data for `{name}` is truncated")))?;
        let values = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        tensors.push((name, Tensor::new(shape, values)?));
        expected_offset += 4 * len as u64;
    }
    if data.len() as u64 != expected_offset {
        return Err(malformed(format!(
            "{} trailing bytes after the data section",
            data.len() as u64 - expected_offset.min(data.len() as u64)
        )));
    }
    Ok(Checkpoint { variant, tensors })
}

pub fn save_checkpoint(path: &Path, variant: Variant, weights: &Weights<f32>) -> Result<()> {
    write_atomic(path, &encode_checkpoint(variant, weights)?)
}

/// Reads a checkpoint and rebuilds the graph its variant names.
pub fn load_checkpoint(path: &Path) -> Result<(ModelGraph, Weights<f32>)> {
    let ck = decode_checkpoint(&read_file(path)?)?;
    let graph = build(ck.variant);
    let weights = Weights::load_named(&graph, ck.tensors)?;
    Ok((graph, weights))
}
