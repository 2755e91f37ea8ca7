//! Domain types shared across the pipeline.
//!
//! Coordinates come in two flavours: *raw* sample indices into the
//! instrument trace and *downsampled* indices after block averaging. All
//! intervals are half-open `[start, end)` in both.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Channels on a flow cell are numbered `1..=MAX_CHANNELS`.
pub const MAX_CHANNELS: u16 = 512;

/// One channel's ionic-current time series in picoamps.
#[derive(Clone, Debug, PartialEq)]
pub struct Trace {
    pub run_id: String,
    pub channel: u16,
    pub sample_rate_hz: f64,
    pub samples: Vec<f32>,
}

impl Trace {
    pub fn new(
        run_id: impl Into<String>,
        channel: u16,
        sample_rate_hz: f64,
        samples: Vec<f32>,
    ) -> Result<Self> {
        let trace = Trace {
            run_id: run_id.into(),
            channel,
            sample_rate_hz,
            samples,
        };
        trace.validate()?;
        Ok(trace)
    }

    pub fn validate(&self) -> Result<()> {
        if self.samples.is_empty() {
            return Err(Error::EmptyTrace);
        }
        if !(1..=MAX_CHANNELS).contains(&self.channel) {
            return Err(Error::InvalidConfig(format!(
                "channel {} outside 1..={MAX_CHANNELS}",
                self.channel
            )));
        }
        if !(self.sample_rate_hz.is_finite() && self.sample_rate_hz > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "sample rate {} must be positive",
                self.sample_rate_hz
            )));
        }
        if self.samples.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteInput);
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

/// Ground-truth capture interval in raw-sample coordinates.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CaptureAnnotation {
    pub start_raw: usize,
    pub end_raw: usize,
}

impl CaptureAnnotation {
    pub fn new(start_raw: usize, end_raw: usize) -> Self {
        CaptureAnnotation { start_raw, end_raw }
    }

    pub fn len(&self) -> usize {
        self.end_raw - self.start_raw
    }

    pub fn is_empty(&self) -> bool {
        self.end_raw <= self.start_raw
    }
}

/// Predicted capture interval in raw-sample coordinates.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CaptureRegion {
    pub start_raw: usize,
    pub end_raw: usize,
    pub confidence: f64,
}

/// Anything with a half-open raw interval.
pub trait RawInterval {
    fn start(&self) -> usize;
    fn end(&self) -> usize;
}

impl RawInterval for CaptureAnnotation {
    fn start(&self) -> usize {
        self.start_raw
    }
    fn end(&self) -> usize {
        self.end_raw
    }
}

impl RawInterval for CaptureRegion {
    fn start(&self) -> usize {
        self.start_raw
    }
    fn end(&self) -> usize {
        self.end_raw
    }
}

/// Checks that intervals are non-empty, sorted by start and pairwise
/// disjoint, and (optionally) that they fit inside a trace of `len` samples.
pub fn validate_intervals<I: RawInterval>(intervals: &[I], len: Option<usize>) -> Result<()> {
    for (i, iv) in intervals.iter().enumerate() {
        if iv.start() >= iv.end() {
            return Err(Error::InvalidInterval {
                start: iv.start(),
                end: iv.end(),
                reason: "start must be before end",
            });
        }
        if let Some(len) = len {
            if iv.end() > len {
                return Err(Error::InvalidInterval {
                    start: iv.start(),
                    end: iv.end(),
                    reason: "extends past the end of the trace",
                });
            }
        }
        if i > 0 {
            let prev = &intervals[i - 1];
            if iv.start() < prev.start() {
                return Err(Error::UnorderedAnnotations {
                    previous: prev.start(),
                    start: iv.start(),
                });
            }
            if iv.start() < prev.end() {
                return Err(Error::OverlappingAnnotations {
                    first_start: prev.start(),
                    first_end: prev.end(),
                    second_start: iv.start(),
                    second_end: iv.end(),
                });
            }
        }
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DownsampleMethod {
    /// Arithmetic mean of each block of `factor` samples.
    #[default]
    BlockMean,
    /// First sample of each block (ablation only).
    Stride,
}

/// Signal-path parameters shared by training, offline detection and the
/// streaming service.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DetectorConfig {
    pub downsample_factor: usize,
    pub window_size: usize,
    pub train_step: usize,
    pub infer_step: usize,
    pub threshold: f64,
    pub normalization_scale_pa: f64,
    #[serde(default)]
    pub downsample_method: DownsampleMethod,
}

pub const DEFAULT_DOWNSAMPLE_FACTOR: usize = 100;
pub const DEFAULT_WINDOW_SIZE: usize = 2000;
pub const DEFAULT_THRESHOLD: f64 = 0.524;
pub const DEFAULT_NORMALIZATION_SCALE_PA: f64 = 200.0;

impl Default for DetectorConfig {
    fn default() -> Self {
        DetectorConfig::for_window(DEFAULT_WINDOW_SIZE)
    }
}

impl DetectorConfig {
    /// Defaults with the steps derived from `window_size`.
    pub fn for_window(window_size: usize) -> Self {
        DetectorConfig {
            downsample_factor: DEFAULT_DOWNSAMPLE_FACTOR,
            window_size,
            train_step: train_step_for(window_size),
            infer_step: window_size,
            threshold: DEFAULT_THRESHOLD,
            normalization_scale_pa: DEFAULT_NORMALIZATION_SCALE_PA,
            downsample_method: DownsampleMethod::BlockMean,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if self.downsample_factor == 0 {
            return bad("downsample_factor must be at least 1".into());
        }
        if self.window_size == 0 || self.train_step == 0 || self.infer_step == 0 {
            return bad("window_size and steps must be positive".into());
        }
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return bad(format!("threshold {} outside (0, 1)", self.threshold));
        }
        if !(self.normalization_scale_pa.is_finite() && self.normalization_scale_pa > 0.0) {
            return bad(format!(
                "normalization scale {} must be positive",
                self.normalization_scale_pa
            ));
        }
        Ok(())
    }

    /// Raw samples spanned by one window.
    pub fn window_raw_len(&self) -> usize {
        self.window_size * self.downsample_factor
    }
}

/// Training step for a window size: `round(1.1 * window_size)`, half-up.
pub fn train_step_for(window_size: usize) -> usize {
    (11 * window_size + 5) / 10
}

/// Maps a raw sample index to the downsampled index containing it.
pub fn raw_to_downsampled(idx_raw: usize, factor: usize) -> usize {
    idx_raw / factor
}

/// First raw sample of downsampled index `idx_ds`.
pub fn downsampled_to_raw(idx_ds: usize, factor: usize) -> usize {
    idx_ds * factor
}

/// Window-level classification scores. Accuracy, precision and recall are
/// percentages; F1 is on the unit scale.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub maximize_score: f64,
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl MetricsReport {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.tn + self.fn_
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn raw_to_downsampled_examples() {
        assert_eq!(raw_to_downsampled(600, 100), 6);
        assert_eq!(raw_to_downsampled(0, 100), 0);
        assert_eq!(raw_to_downsampled(6_000_000, 100), 60_000);
        assert_eq!(raw_to_downsampled(699, 100), 6);
    }

    #[test]
    fn train_step_rounds_half_up() {
        assert_eq!(train_step_for(2000), 2200);
        assert_eq!(train_step_for(1040), 1144);
        // 1.1 * 5 = 5.5 -> 6
        assert_eq!(train_step_for(5), 6);
        assert_eq!(DetectorConfig::default().train_step, 2200);
        assert_eq!(DetectorConfig::default().infer_step, 2000);
    }

    #[test]
    fn trace_rejects_bad_input() {
        assert!(matches!(
            Trace::new("r", 1, 4000.0, vec![]),
            Err(Error::EmptyTrace)
        ));
        assert!(matches!(
            Trace::new("r", 1, 4000.0, vec![1.0, f32::NAN]),
            Err(Error::NonFiniteInput)
        ));
        assert!(Trace::new("r", 0, 4000.0, vec![1.0]).is_err());
        assert!(Trace::new("r", 513, 4000.0, vec![1.0]).is_err());
        assert!(Trace::new("r", 512, 4000.0, vec![1.0]).is_ok());
    }

    #[test]
    fn interval_validation() {
        let ok = [CaptureAnnotation::new(0, 10), CaptureAnnotation::new(10, 20)];
        validate_intervals(&ok, Some(20)).unwrap();
        assert!(validate_intervals(&ok, Some(19)).is_err());

        let overlap = [CaptureAnnotation::new(0, 10), CaptureAnnotation::new(5, 20)];
        let err = validate_intervals(&overlap, None).unwrap_err();
        assert!(err.to_string().starts_with("overlapping annotations"), "{err}");

        let unordered = [CaptureAnnotation::new(30, 40), CaptureAnnotation::new(0, 10)];
        assert!(matches!(
            validate_intervals(&unordered, None),
            Err(Error::UnorderedAnnotations { .. })
        ));

        let empty = [CaptureAnnotation::new(5, 5)];
        assert!(validate_intervals(&empty, None).is_err());
    }

    proptest! {
        #[test]
        fn downsample_round_trip_on_block_boundaries(idx in 0usize..1_000_000, factor in 1usize..1000) {
            prop_assert_eq!(raw_to_downsampled(downsampled_to_raw(idx, factor), factor), idx);
        }
    }
}
