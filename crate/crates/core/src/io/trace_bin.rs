//! Binary trace format, little-endian:
//!
//! | field          | type                |
//! |----------------|---------------------|
//! | magic          | `b"NPTR"`           |
//! | version        | u32 (= 1)           |
//! | channel        | u32                 |
//! | run_id         | u64 length + UTF-8  |
//! | sample_rate_hz | f64                 |
//! | n_samples      | u64                 |
//! | samples        | n_samples × f32     |

use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::types::Trace;

pub const TRACE_MAGIC: &[u8; 4] = b"NPTR";
pub const TRACE_VERSION: u32 = 1;

/// Bytes before the samples.
pub fn header_len(run_id: &str) -> usize {
    4 + 4 + 4 + 8 + run_id.len() + 8 + 8
}

pub fn encode_trace(trace: &Trace) -> Vec<u8> {
    let mut out = Vec::with_capacity(header_len(&trace.run_id) + 4 * trace.samples.len());
    out.extend_from_slice(TRACE_MAGIC);
    out.extend_from_slice(&TRACE_VERSION.to_le_bytes());
    out.extend_from_slice(&u32::from(trace.channel).to_le_bytes());
    out.extend_from_slice(&(trace.run_id.len() as u64).to_le_bytes());
    out.extend_from_slice(trace.run_id.as_bytes());
    out.extend_from_slice(&trace.sample_rate_hz.to_le_bytes());
    out.extend_from_slice(&(trace.samples.len() as u64).to_le_bytes());
    for v in &trace.samples {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn write_trace_bin(trace: &Trace, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut f = std::io::BufWriter::new(std::fs::File::create(path).map_err(|e| Error::io(path, e))?);
    f.write_all(&encode_trace(trace)).and_then(|_| f.flush()).map_err(|e| Error::io(path, e))
}

pub fn read_trace_bin(path: impl AsRef<Path>) -> Result<Trace> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_trace(&bytes)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &'static str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let s = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(Error::Truncated { offset: self.pos, what }),
        }
    }

    fn u32(&mut self, what: &'static str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &'static str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }
}

pub fn decode_trace(bytes: &[u8]) -> Result<Trace> {
    let mut c = Cursor { bytes, pos: 0 };
    if bytes.len() < 4 || &bytes[..4] != TRACE_MAGIC {
        return Err(Error::NotATraceFile);
    }
    c.pos = 4;
    let version = c.u32("version")?;
    if version != TRACE_VERSION {
        return Err(Error::UnsupportedVersion(version));
    }
    let channel = c.u32("channel")?;
    let id_len = c.u64("run id length")? as usize;
    let run_id = std::str::from_utf8(c.take(id_len, "run id")?)
        .map_err(|_| Error::InvalidConfig("run id is not UTF-8".into()))?
        .to_string();
    let sample_rate_hz = f64::from_le_bytes(c.take(8, "sample rate")?.try_into().unwrap());
    let n = c.u64("sample count")? as usize;
    let raw = c.take(n.checked_mul(4).ok_or(Error::Truncated { offset: c.pos, what: "samples" })?, "samples")?;
    let samples = raw.chunks_exact(4).map(|b| f32::from_le_bytes(b.try_into().unwrap())).collect();
    let channel = u16::try_from(channel).map_err(|_| Error::InvalidConfig(format!("channel {channel} out of range")))?;
    Trace::new(run_id, channel, sample_rate_hz, samples)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn trace() -> Trace {
        Trace::new("run007", 42, 4000.0, vec![180.5, -1.25, f32::MIN_POSITIVE, 3.0e-8]).unwrap()
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let t = trace();
        let back = decode_trace(&encode_trace(&t)).unwrap();
        assert_eq!(back, t);
        let bits = |s: &[f32]| s.iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&back.samples), bits(&t.samples));
    }

    #[test]
    fn size_arithmetic() {
        let t = trace();
        assert_eq!(encode_trace(&t).len(), 36 + 6 + 4 * 4);
        assert_eq!(header_len("run007"), 42);
    }

    #[test]
    fn distinct_errors() {
        let mut bytes = encode_trace(&trace());
        assert!(matches!(decode_trace(b"NOPE1234"), Err(Error::NotATraceFile)));
        assert_eq!(decode_trace(b"xx").unwrap_err().to_string(), "not a trace file");
        let cut = &bytes[..bytes.len() - 3];
        assert!(matches!(decode_trace(cut), Err(Error::Truncated { what: "samples", .. })));
        assert!(matches!(decode_trace(&bytes[..10]), Err(Error::Truncated { .. })));
        bytes[4] = 2;
        assert!(matches!(decode_trace(&bytes), Err(Error::UnsupportedVersion(2))));
    }
}
