//! Wire types. JSON schemas for each live in `schemas/`.

use std::path::PathBuf;

use capdet_core::io::{ChannelStatus, DetectionExport};
use capdet_core::types::CaptureRegion;
use serde::{Deserialize, Serialize};

use crate::ingest::DeadPoreConfig;

pub const PROTOCOL_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChannelUpdate {
    pub channel: u16,
    pub status: ChannelStatus,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegionEvent {
    pub channel: u16,
    pub start_raw: usize,
    pub end_raw: usize,
    pub confidence: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Heartbeat {
    pub timestamp: String,
    pub session_id: String,
}

/// Server-sent event payload; serialized as `{"<kind>": {...}}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ServerEvent {
    ChannelUpdate(ChannelUpdate),
    Region(RegionEvent),
    Heartbeat(Heartbeat),
}

impl ServerEvent {
    pub fn kind(&self) -> &'static str {
        match self {
            ServerEvent::ChannelUpdate(_) => "channel_update",
            ServerEvent::Region(_) => "region",
            ServerEvent::Heartbeat(_) => "heartbeat",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum SourceRequest {
    Replay {
        files: Vec<PathBuf>,
    },
    LiveSim {
        n_channels: usize,
        seed: u64,
        #[serde(default)]
        samples_per_channel: Option<usize>,
        #[serde(default)]
        dead_fraction: Option<f64>,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CreateSessionRequest {
    pub source: SourceRequest,
    pub weights: PathBuf,
    #[serde(default)]
    pub threshold: Option<f64>,
    /// Playback speed relative to real time; absent means as fast as possible.
    #[serde(default)]
    pub speed: Option<f64>,
    #[serde(default)]
    pub dead_pore: Option<DeadPoreConfig>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SessionState {
    Running,
    Paused,
    Finished,
    Stopped,
    Failed,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SessionSummary {
    pub session_id: String,
    pub state: SessionState,
    pub n_channels: usize,
    pub created_at: String,
    pub speed: Option<f64>,
    pub threshold: f64,
    pub model: String,
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChannelSummary {
    pub channel: u16,
    pub run_id: String,
    pub status: ChannelStatus,
    pub last_update: Option<String>,
    pub raw_samples: usize,
    pub regions: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SignalPoint {
    /// Downsampled index.
    pub index: usize,
    pub value_pa: f32,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WindowProbability {
    pub ds_start: usize,
    pub ds_end: usize,
    pub probability: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SignalResponse {
    pub channel: u16,
    pub downsample_factor: usize,
    /// Downsampled range covered by the retained buffer.
    pub ds_start: usize,
    pub ds_end: usize,
    pub decimated: bool,
    pub points: Vec<SignalPoint>,
    pub regions: Vec<CaptureRegion>,
    pub windows: Vec<WindowProbability>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SessionExport {
    pub schema_version: u32,
    pub session_id: String,
    pub generated_at: String,
    pub channels: Vec<DetectionExport>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "action", rename_all = "snake_case")]
pub enum ControlRequest {
    Pause,
    Resume,
    Stop,
    SetSpeed { speed: Option<f64> },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ThresholdRequest {
    pub threshold: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: String,
}

/// Min/max decimation to at most `max_points` points. Each bucket keeps its
/// minimum and maximum (in index order), so peaks and drops survive.
pub fn decimate(values: &[f32], offset: usize, max_points: usize) -> (Vec<SignalPoint>, bool) {
    let point = |i: usize| SignalPoint {
        index: offset + i,
        value_pa: values[i],
    };
    if values.len() <= max_points {
        return ((0..values.len()).map(point).collect(), false);
    }
    if max_points < 2 {
        return (if max_points == 1 { vec![point(0)] } else { Vec::new() }, true);
    }
    let buckets = max_points / 2;
    let bucket = values.len().div_ceil(buckets);
    let mut out = Vec::with_capacity(2 * buckets);
    for (b, chunk) in values.chunks(bucket).enumerate() {
        let base = b * bucket;
        let (mut lo, mut hi) = (0, 0);
        for (i, v) in chunk.iter().enumerate() {
            if *v < chunk[lo] {
                lo = i;
            }
            if *v > chunk[hi] {
                hi = i;
            }
        }
        let (first, second) = if lo <= hi { (lo, hi) } else { (hi, lo) };
        out.push(point(base + first));
        if second != first {
            out.push(point(base + second));
        }
    }
    (out, true)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn event_shape() {
        let e = ServerEvent::ChannelUpdate(ChannelUpdate {
            channel: 7,
            status: ChannelStatus::Dead,
        });
        assert_eq!(serde_json::to_string(&e).unwrap(), r#"{"channel_update":{"channel":7,"status":"dead"}}"#);
    }

    #[test]
    fn decimation_bounds_and_extremes() {
        let values: Vec<f32> = (0..60_000).map(|i| ((i as f32) * 0.01).sin() * 100.0).collect();
        let mut v = values.clone();
        v[12_345] = -500.0;
        v[40_000] = 900.0;
        let (pts, dec) = decimate(&v, 10, 1000);
        assert!(dec);
        assert!(pts.len() <= 1000);
        assert!(pts.iter().any(|p| p.index == 12_355 && p.value_pa == -500.0));
        assert!(pts.iter().any(|p| p.index == 40_010 && p.value_pa == 900.0));
        assert!(pts.windows(2).all(|w| w[0].index < w[1].index));

        let (pts, dec) = decimate(&values[..500], 0, 1000);
        assert!(!dec);
        assert_eq!(pts.len(), 500);
    }
}
