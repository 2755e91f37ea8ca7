//! On-disk formats: traces (CSV and binary), annotations, detection exports.
//! Model weights live in [`crate::nn::weights`].

pub mod annotations;
pub mod export;
pub mod trace_bin;
pub mod trace_csv;

use std::path::Path;

use crate::error::Result;
use crate::types::Trace;

pub use annotations::{read_annotations, write_annotations, AnnotationFile};
pub use export::{read_detections, write_detections, ChannelStatus, DetectionExport, ExportConfig, EXPORT_SCHEMA, EXPORT_SCHEMA_VERSION};
pub use trace_bin::{read_trace_bin, write_trace_bin, TRACE_MAGIC};
pub use trace_csv::{read_trace_csv, write_trace_csv};

/// Reads a trace, picking the format from the extension (`.csv` is text,
/// anything else binary).
pub fn read_trace(path: impl AsRef<Path>) -> Result<Trace> {
    let path = path.as_ref();
    if is_csv(path) {
        read_trace_csv(path)
    } else {
        read_trace_bin(path)
    }
}

pub fn write_trace(trace: &Trace, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    if is_csv(path) {
        write_trace_csv(trace, path)
    } else {
        write_trace_bin(trace, path)
    }
}

fn is_csv(path: &Path) -> bool {
    path.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv"))
}
