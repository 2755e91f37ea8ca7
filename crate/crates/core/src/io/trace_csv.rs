//! Text trace format:
//!
//! ```text
//! # run_id=run001
//! # channel=17
//! # sample_rate_hz=4000
//! current_pa
//! 181.25
//! 179.5
//! ```

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::types::Trace;

pub fn write_trace_csv(trace: &Trace, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, format_trace_csv(trace)).map_err(|e| Error::io(path, e))
}

pub fn format_trace_csv(trace: &Trace) -> String {
    let mut out = String::with_capacity(trace.samples.len() * 8 + 96);
    let _ = writeln!(out, "# run_id={}", trace.run_id);
    let _ = writeln!(out, "# channel={}", trace.channel);
    let _ = writeln!(out, "# sample_rate_hz={}", trace.sample_rate_hz);
    out.push_str("current_pa\n");
    for v in &trace.samples {
        // Shortest representation that parses back to the same f32.
        let _ = writeln!(out, "{v}");
    }
    out
}

pub fn read_trace_csv(path: impl AsRef<Path>) -> Result<Trace> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_trace_csv(&text, path)
}

pub fn parse_trace_csv(text: &str, path: &Path) -> Result<Trace> {
    let err = |line: usize, message: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };
    let mut meta: HashMap<&str, &str> = HashMap::new();
    let mut samples = Vec::new();
    let mut header_seen = false;
    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(comment) = line.strip_prefix('#') {
            if header_seen {
                return Err(err(line_no, "metadata after header".into()));
            }
            if let Some((k, v)) = comment.split_once('=') {
                meta.insert(k.trim(), v.trim());
            }
            continue;
        }
        if !header_seen {
            if line != "current_pa" {
                return Err(err(line_no, format!("expected header `current_pa`, found `{line}`")));
            }
            header_seen = true;
            continue;
        }
        let v: f32 = line
            .parse()
            .map_err(|_| err(line_no, format!("not a number: `{line}`")))?;
        samples.push(v);
    }
    if !header_seen {
        return Err(err(text.lines().count().max(1), "missing header `current_pa`".into()));
    }
    let get = |key: &'static str| meta.get(key).copied().ok_or(Error::MissingMetadata(key));
    let sample_rate_hz: f64 = get("sample_rate_hz")?
        .parse()
        .map_err(|_| err(0, "sample_rate_hz is not a number".into()))?;
    let run_id = get("run_id")?.to_string();
    let channel: u16 = get("channel")?
        .parse()
        .map_err(|_| err(0, "channel is not an integer".into()))?;
    Trace::new(run_id, channel, sample_rate_hz, samples)
}
