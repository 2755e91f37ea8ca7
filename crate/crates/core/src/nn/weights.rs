//! Versioned weights container.
//!
//! All integers are little-endian.
//!
//! ```text
//! magic          4 bytes   "NPWT"
//! format_version u32       1
//! header_len     u32
//! header         header_len bytes of UTF-8 JSON:
//!                {"format_version":1,"architecture":{...},"seed":N}
//! tensor_count   u32
//! per tensor:
//!   name_len     u32
//!   name         name_len bytes UTF-8
//!   ndim         u32
//!   dims         ndim x u64
//!   values       prod(dims) x f32
//! ```
//!
//! The tensors must match the names and shapes implied by the
//! architecture descriptor, in order.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Architecture, ModelParams, Tensor};
use crate::error::{Error, Result};

pub const WEIGHTS_MAGIC: &[u8; 4] = b"NPWT";
pub const WEIGHTS_FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Header {
    format_version: u32,
    architecture: Architecture,
    seed: u64,
}

pub fn write_weights(params: &ModelParams<f32>, out: &mut impl Write) -> std::io::Result<()> {
    let header = serde_json::to_vec(&Header {
        format_version: WEIGHTS_FORMAT_VERSION,
        architecture: params.arch.clone(),
        seed: params.seed,
    })
    .expect("header serializes");
    out.write_all(WEIGHTS_MAGIC)?;
    out.write_all(&WEIGHTS_FORMAT_VERSION.to_le_bytes())?;
    out.write_all(&(header.len() as u32).to_le_bytes())?;
    out.write_all(&header)?;
    out.write_all(&(params.tensors.len() as u32).to_le_bytes())?;
    for t in &params.tensors {
        out.write_all(&(t.name.len() as u32).to_le_bytes())?;
        out.write_all(t.name.as_bytes())?;
        out.write_all(&(t.shape.len() as u32).to_le_bytes())?;
        for &d in &t.shape {
            out.write_all(&(d as u64).to_le_bytes())?;
        }
        let mut buf = Vec::with_capacity(t.data.len() * 4);
        for v in &t.data {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        out.write_all(&buf)?;
    }
    Ok(())
}

pub fn save_weights(params: &ModelParams<f32>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    params.validate()?;
    let mut buf = Vec::new();
    write_weights(params, &mut buf).expect("writing to memory");
    fs::write(path, buf).map_err(|e| Error::io(path, e))
}

pub fn load_weights(path: impl AsRef<Path>) -> Result<ModelParams<f32>> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    read_weights(&bytes)
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::CorruptWeights(format!("truncated while reading {what} at byte {}", self.pos)));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().expect("8 bytes")))
    }
}

pub fn read_weights(bytes: &[u8]) -> Result<ModelParams<f32>> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(4, "magic")? != WEIGHTS_MAGIC {
        return Err(Error::CorruptWeights("bad magic, not a weights file".into()));
    }
    let version = r.u32("format version")?;
    if version != WEIGHTS_FORMAT_VERSION {
        return Err(Error::UnsupportedVersion(version));
    }
    let header_len = r.u32("header length")? as usize;
    let header: Header = serde_json::from_slice(r.take(header_len, "header")?)
        .map_err(|e| Error::CorruptWeights(format!("bad header: {e}")))?;
    if header.format_version != WEIGHTS_FORMAT_VERSION {
        return Err(Error::UnsupportedVersion(header.format_version));
    }
    let count = r.u32("tensor count")? as usize;
    let expected = header.architecture.tensor_shapes();
    if count != expected.len() {
        return Err(Error::CorruptWeights(format!(
            "descriptor implies {} tensors, file has {count}",
            expected.len()
        )));
    }
    let mut tensors = Vec::with_capacity(count);
    for _ in 0..count {
        let name_len = r.u32("tensor name length")? as usize;
        let name = std::str::from_utf8(r.take(name_len, "tensor name")?)
            .map_err(|_| Error::CorruptWeights("tensor name is not UTF-8".into()))?
            .to_string();
        let ndim = r.u32("tensor rank")? as usize;
        if ndim > 8 {
            return Err(Error::CorruptWeights(format!("tensor {name} has implausible rank {ndim}")));
        }
        let shape = (0..ndim)
            .map(|_| r.u64("tensor dims").map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        let n = shape
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| Error::CorruptWeights(format!("tensor {name} is too large")))?;
        let raw = r.take(n.saturating_mul(4), "tensor values")?;
        let data = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        tensors.push(Tensor { name, shape, data });
    }
    if r.pos != bytes.len() {
        return Err(Error::CorruptWeights(format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    let params = ModelParams {
        arch: header.architecture,
        seed: header.seed,
        tensors,
    };
    params.validate()?;
    Ok(params)
}
