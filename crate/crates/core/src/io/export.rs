//! Per-channel detection export (JSON). The schema ships as
//! `schemas/detection_export.schema.json`.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::detect::Detection;
use crate::error::{Error, Result};
use crate::types::{validate_intervals, CaptureRegion, DetectorConfig};

pub const EXPORT_SCHEMA_VERSION: u32 = 1;
pub const EXPORT_SCHEMA: &str = include_str!("../../schemas/detection_export.schema.json");

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChannelStatus {
    Active,
    Capture,
    Dead,
    Translocating,
}

impl ChannelStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            ChannelStatus::Active => "active",
            ChannelStatus::Capture => "capture",
            ChannelStatus::Dead => "dead",
            ChannelStatus::Translocating => "translocating",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExportConfig {
    pub threshold: f64,
    pub window_size: usize,
    pub downsample_factor: usize,
    pub model: String,
}

impl ExportConfig {
    pub fn new(cfg: &DetectorConfig, model: impl Into<String>) -> Self {
        ExportConfig {
            threshold: cfg.threshold,
            window_size: cfg.window_size,
            downsample_factor: cfg.downsample_factor,
            model: model.into(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectionExport {
    pub schema_version: u32,
    pub run_id: String,
    pub channel: u16,
    pub status: ChannelStatus,
    pub dead: bool,
    pub captures: Vec<CaptureRegion>,
    /// Never populated; kept for format compatibility.
    pub translocations: Vec<CaptureRegion>,
    /// RFC 3339.
    pub generated_at: String,
    pub config: ExportConfig,
}

impl DetectionExport {
    pub fn new(
        run_id: impl Into<String>,
        channel: u16,
        status: ChannelStatus,
        captures: Vec<CaptureRegion>,
        config: ExportConfig,
    ) -> Self {
        DetectionExport {
            schema_version: EXPORT_SCHEMA_VERSION,
            run_id: run_id.into(),
            channel,
            status,
            dead: status == ChannelStatus::Dead,
            captures,
            translocations: Vec::new(),
            generated_at: chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true),
            config,
        }
    }

    /// Offline result. Status is `capture` if the trace ends inside a region.
    pub fn from_detection(det: &Detection, cfg: &DetectorConfig, model: &str) -> Self {
        let ends_in_capture = det
            .regions
            .last()
            .is_some_and(|r| r.end_raw >= det.ds_len * cfg.downsample_factor);
        let status = if ends_in_capture {
            ChannelStatus::Capture
        } else {
            ChannelStatus::Active
        };
        DetectionExport::new(det.run_id.clone(), det.channel, status, det.regions.clone(), ExportConfig::new(cfg, model))
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(format!("detection export: {m}")));
        if self.schema_version != EXPORT_SCHEMA_VERSION {
            return Err(Error::UnsupportedVersion(self.schema_version));
        }
        if self.dead != (self.status == ChannelStatus::Dead) {
            return bad(format!("status {} contradicts dead={}", self.status.as_str(), self.dead));
        }
        validate_intervals(&self.captures, None)?;
        if let Some(c) = self.captures.iter().find(|c| !(0.0..=1.0).contains(&c.confidence)) {
            return bad(format!("confidence {} outside [0, 1]", c.confidence));
        }
        if chrono::DateTime::parse_from_rfc3339(&self.generated_at).is_err() {
            return bad(format!("generated_at `{}` is not RFC 3339", self.generated_at));
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        self.validate()?;
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let e: DetectionExport = serde_json::from_str(text)?;
        e.validate()?;
        Ok(e)
    }
}

pub fn write_detections(export: &DetectionExport, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, export.to_json()? + "\n").map_err(|e| Error::io(path, e))
}

pub fn read_detections(path: impl AsRef<Path>) -> Result<DetectionExport> {
    let path = path.as_ref();
    DetectionExport::from_json(&std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn region(s: usize, e: usize, c: f64) -> CaptureRegion {
        CaptureRegion {
            start_raw: s,
            end_raw: e,
            confidence: c,
        }
    }

    fn config() -> ExportConfig {
        ExportConfig::new(&DetectorConfig::default(), "capturenet-deep")
    }

    #[test]
    fn two_captures() {
        let e = DetectionExport::new("r", 3, ChannelStatus::Active, vec![region(0, 10, 0.9), region(20, 30, 0.7)], config());
        let json = e.to_json().unwrap();
        let v: serde_json::Value = serde_json::from_str(&json).unwrap();
        assert_eq!(v["captures"].as_array().unwrap().len(), 2);
        assert_eq!(v["translocations"], serde_json::json!([]));
        assert_eq!(v["schema_version"], 1);
        assert_eq!(DetectionExport::from_json(&json).unwrap(), e);
    }

    #[test]
    fn dead_channel() {
        let e = DetectionExport::new("r", 3, ChannelStatus::Dead, vec![], config());
        assert!(e.dead);
        let v: serde_json::Value = serde_json::from_str(&e.to_json().unwrap()).unwrap();
        assert_eq!(v["status"], "dead");
    }

    #[test]
    fn inconsistent_exports_are_rejected() {
        let mut e = DetectionExport::new("r", 3, ChannelStatus::Active, vec![region(0, 10, 0.9)], config());
        e.dead = true;
        assert!(e.validate().is_err());
        let e = DetectionExport::new("r", 3, ChannelStatus::Active, vec![region(0, 10, 1.5)], config());
        assert!(e.validate().is_err());
        let e = DetectionExport::new("r", 3, ChannelStatus::Active, vec![region(0, 10, 0.5), region(5, 12, 0.5)], config());
        assert!(e.validate().is_err());
    }
}
