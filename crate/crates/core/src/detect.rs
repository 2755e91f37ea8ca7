//! Offline full-trace detection: downsample, normalize, window, classify,
//! threshold, smooth, aggregate.

use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::metrics;
use crate::nn::{Mode, ModelParams};
use crate::postprocess::{aggregate_regions, label_windows, WindowPrediction};
use crate::preprocess::{label_window, prepare_signal, window_starts, Tail};
use crate::types::{CaptureAnnotation, CaptureRegion, DetectorConfig, MetricsReport, Trace};

/// Anything that scores normalized windows with a capture probability.
pub trait WindowClassifier: Send + Sync {
    /// Required window length, if fixed.
    fn window_size(&self) -> Option<usize>;
    fn model_id(&self) -> &str;
    fn predict(&self, windows: &[&[f32]], exec: Exec) -> Result<Vec<f32>>;
}

impl WindowClassifier for ModelParams<f32> {
    fn window_size(&self) -> Option<usize> {
        self.arch.window_size()
    }

    fn model_id(&self) -> &str {
        self.arch.model_id()
    }

    fn predict(&self, windows: &[&[f32]], exec: Exec) -> Result<Vec<f32>> {
        self.forward(windows, Mode::Eval, exec)
    }
}

pub fn check_compatible(model: &dyn WindowClassifier, cfg: &DetectorConfig) -> Result<()> {
    cfg.validate()?;
    match model.window_size() {
        Some(w) if w != cfg.window_size => Err(Error::InvalidConfig(format!(
            "model expects windows of {w} points, detector is configured for {}",
            cfg.window_size
        ))),
        _ => Ok(()),
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Detection {
    pub run_id: String,
    pub channel: u16,
    /// Length of the downsampled signal.
    pub ds_len: usize,
    pub windows: Vec<WindowPrediction>,
    pub regions: Vec<CaptureRegion>,
}

/// Classifies every inference window of an already downsampled and
/// normalized signal.
pub fn detect_signal(
    model: &dyn WindowClassifier,
    signal: &[f32],
    cfg: &DetectorConfig,
    exec: Exec,
) -> Result<(Vec<WindowPrediction>, Vec<CaptureRegion>)> {
    check_compatible(model, cfg)?;
    let starts = window_starts(signal.len(), cfg.window_size, cfg.infer_step, Tail::EndAligned)?;
    let batch: Vec<&[f32]> = starts.iter().map(|&s| &signal[s..s + cfg.window_size]).collect();
    let probs: Vec<f64> = model.predict(&batch, exec)?.into_iter().map(f64::from).collect();
    let windows = label_windows(&starts, cfg.window_size, &probs, cfg.threshold);
    let regions = aggregate_regions(&windows, cfg.downsample_factor);
    Ok((windows, regions))
}

pub fn detect_trace(model: &dyn WindowClassifier, trace: &Trace, cfg: &DetectorConfig, exec: Exec) -> Result<Detection> {
    let signal = prepare_signal(trace, cfg)?;
    let (windows, regions) = detect_signal(model, &signal, cfg, exec)?;
    Ok(Detection {
        run_id: trace.run_id.clone(),
        channel: trace.channel,
        ds_len: signal.len(),
        windows,
        regions,
    })
}

/// Detects on many traces; `exec` spreads traces over threads and each
/// trace runs sequentially inside.
pub fn detect_many(model: &dyn WindowClassifier, traces: &[Trace], cfg: &DetectorConfig, exec: Exec) -> Vec<Result<Detection>> {
    exec.map(traces, |t| detect_trace(model, t, cfg, Exec::Sequential))
}

/// Ground-truth labels for predicted windows.
pub fn window_truth(windows: &[WindowPrediction], annotations: &[CaptureAnnotation], factor: usize) -> Vec<bool> {
    windows
        .iter()
        .map(|w| label_window(w.ds_start * factor..w.ds_end * factor, annotations))
        .collect()
}

/// Window-level metrics on thresholded, pre-smoothing labels.
pub fn evaluate_windows(windows: &[WindowPrediction], annotations: &[CaptureAnnotation], factor: usize) -> Result<MetricsReport> {
    let preds: Vec<bool> = windows.iter().map(|w| w.thresholded).collect();
    metrics::evaluate(&preds, &window_truth(windows, annotations, factor))
}
