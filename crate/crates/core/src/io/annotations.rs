//! Capture annotations as JSON:
//! `{"run_id": "...", "channel": 1, "captures": [{"start": 0, "end": 10}]}`
//! with half-open raw-sample intervals.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{validate_intervals, CaptureAnnotation};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Interval {
    pub start: usize,
    pub end: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotationFile {
    pub run_id: String,
    pub channel: u16,
    pub captures: Vec<Interval>,
}

impl AnnotationFile {
    pub fn new(run_id: impl Into<String>, channel: u16, captures: &[CaptureAnnotation]) -> Self {
        AnnotationFile {
            run_id: run_id.into(),
            channel,
            captures: captures
                .iter()
                .map(|c| Interval {
                    start: c.start_raw,
                    end: c.end_raw,
                })
                .collect(),
        }
    }

    pub fn annotations(&self) -> Vec<CaptureAnnotation> {
        self.captures.iter().map(|c| CaptureAnnotation::new(c.start, c.end)).collect()
    }

    pub fn validate(&self) -> Result<()> {
        validate_intervals(&self.annotations(), None)
    }
}

pub fn parse_annotations(text: &str) -> Result<AnnotationFile> {
    let file: AnnotationFile = serde_json::from_str(text)?;
    file.validate()?;
    Ok(file)
}

pub fn read_annotations(path: impl AsRef<Path>) -> Result<AnnotationFile> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_annotations(&text)
}

pub fn write_annotations(file: &AnnotationFile, path: impl AsRef<Path>) -> Result<()> {
    file.validate()?;
    let path = path.as_ref();
    let text = serde_json::to_string_pretty(file)?;
    std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}
