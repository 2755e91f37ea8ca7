//! Incremental per-channel detection.
//!
//! Raw chunks are block-reduced as they arrive, windows are classified as
//! soon as they are complete, and labels are smoothed with one window of
//! latency. Fed a whole trace and then [`StreamingDetector::finish`]ed, the
//! detector yields exactly the windows and regions of
//! [`capdet_core::detect::detect_trace`].

use std::collections::VecDeque;
use std::sync::Arc;

use capdet_core::detect::{check_compatible, WindowClassifier};
use capdet_core::exec::Exec;
use capdet_core::io::ChannelStatus;
use capdet_core::postprocess::{smooth_one, RegionMerger, WindowPrediction};
use capdet_core::preprocess::{normalize, reduce_block};
use capdet_core::types::{CaptureRegion, DetectorConfig};
use capdet_core::Result;
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DeadPoreConfig {
    /// Trailing span inspected, in seconds of signal.
    pub window_s: f64,
    pub percentile: f64,
    pub threshold_pa: f64,
}

impl Default for DeadPoreConfig {
    fn default() -> Self {
        DeadPoreConfig {
            window_s: 10.0,
            percentile: 95.0,
            threshold_pa: 10.0,
        }
    }
}

/// Nearest-rank percentile of `|v|`.
pub fn abs_percentile(values: impl Iterator<Item = f32>, pct: f64) -> Option<f32> {
    let mut v: Vec<f32> = values.map(f32::abs).collect();
    if v.is_empty() {
        return None;
    }
    let rank = ((pct / 100.0 * v.len() as f64).ceil() as usize).clamp(1, v.len());
    let (_, x, _) = v.select_nth_unstable_by(rank - 1, f32::total_cmp);
    Some(*x)
}

#[derive(Clone, Debug, PartialEq)]
pub enum DetectorEvent {
    Status(ChannelStatus),
    /// A region was opened or extended; carries its current extent.
    Region(CaptureRegion),
}

pub struct StreamingDetector {
    model: Arc<dyn WindowClassifier>,
    cfg: DetectorConfig,
    dead: DeadPoreConfig,
    dead_points: usize,
    retain: usize,
    pending: Vec<f32>,
    raw_total: usize,
    /// Downsampled values in pA; `ds[0]` has global index `ds_offset`.
    ds: VecDeque<f32>,
    ds_offset: usize,
    next_start: usize,
    /// Scored windows; `windows[0]` has global index `window_base`.
    windows: VecDeque<WindowPrediction>,
    window_base: usize,
    confirmed: usize,
    merger: RegionMerger,
    closed: Vec<CaptureRegion>,
    status: ChannelStatus,
    finished: bool,
}

impl StreamingDetector {
    /// `horizon` is the number of downsampled points kept for display; at
    /// least two windows are always retained.
    pub fn new(
        model: Arc<dyn WindowClassifier>,
        cfg: DetectorConfig,
        dead: DeadPoreConfig,
        sample_rate_hz: f64,
        horizon: usize,
    ) -> Result<Self> {
        check_compatible(model.as_ref(), &cfg)?;
        let dead_points = ((dead.window_s * sample_rate_hz / cfg.downsample_factor as f64).round() as usize).max(1);
        let retain = horizon.max(2 * cfg.window_size).max(dead_points);
        Ok(StreamingDetector {
            model,
            cfg,
            dead,
            dead_points,
            retain,
            pending: Vec::with_capacity(cfg.downsample_factor),
            raw_total: 0,
            ds: VecDeque::new(),
            ds_offset: 0,
            next_start: 0,
            windows: VecDeque::new(),
            window_base: 0,
            confirmed: 0,
            merger: RegionMerger::default(),
            closed: Vec::new(),
            status: ChannelStatus::Active,
            finished: false,
        })
    }

    pub fn config(&self) -> &DetectorConfig {
        &self.cfg
    }

    pub fn status(&self) -> ChannelStatus {
        self.status
    }

    pub fn raw_len(&self) -> usize {
        self.raw_total
    }

    /// Total downsampled points produced so far.
    pub fn ds_len(&self) -> usize {
        self.ds_offset + self.ds.len()
    }

    pub fn ds_offset(&self) -> usize {
        self.ds_offset
    }

    /// Retained downsampled values in pA.
    pub fn ds_values(&self) -> impl ExactSizeIterator<Item = f32> + '_ {
        self.ds.iter().copied()
    }

    /// Retained scored windows. Unconfirmed windows carry `label = thresholded`.
    pub fn windows(&self) -> impl Iterator<Item = &WindowPrediction> {
        self.windows.iter()
    }

    pub fn windows_scored(&self) -> usize {
        self.window_base + self.windows.len()
    }

    pub fn is_finished(&self) -> bool {
        self.finished
    }

    /// Closed regions followed by the one still open, in raw coordinates.
    pub fn regions(&self) -> Vec<CaptureRegion> {
        let mut out = self.closed.clone();
        out.extend(self.merger.current().map(|r| r.to_raw(self.cfg.downsample_factor)));
        out
    }

    /// Appends raw samples. `threshold` applies to windows scored by this call.
    pub fn ingest(&mut self, chunk: &[f32], threshold: f64) -> Result<Vec<DetectorEvent>> {
        let mut events = Vec::new();
        if self.finished || chunk.is_empty() {
            return Ok(events);
        }
        self.raw_total += chunk.len();
        let ds_before = self.ds_len();
        let factor = self.cfg.downsample_factor;
        let method = self.cfg.downsample_method;
        let mut rest = chunk;
        if !self.pending.is_empty() {
            let need = (factor - self.pending.len()).min(rest.len());
            self.pending.extend_from_slice(&rest[..need]);
            rest = &rest[need..];
            if self.pending.len() == factor {
                let v = reduce_block(&self.pending, method);
                self.ds.push_back(v);
                self.pending.clear();
            }
        }
        let blocks = rest.chunks_exact(factor);
        self.pending.extend_from_slice(blocks.remainder());
        for b in blocks {
            self.ds.push_back(reduce_block(b, method));
        }

        let w = self.cfg.window_size;
        let mut starts = Vec::new();
        while self.next_start + w <= self.ds_len() {
            starts.push(self.next_start);
            self.next_start += self.cfg.infer_step;
        }
        self.score(&starts, threshold, &mut events)?;
        if self.ds_len() > ds_before {
            self.update_status(&mut events);
        }
        self.trim();
        Ok(events)
    }

    /// Ends the stream: adds the end-aligned tail window if the regular grid
    /// stopped short and confirms the last window as-is.
    pub fn finish(&mut self, threshold: f64) -> Result<Vec<DetectorEvent>> {
        let mut events = Vec::new();
        if self.finished {
            return Ok(events);
        }
        let n = self.ds_len();
        let w = self.cfg.window_size;
        if self.windows_scored() > 0 {
            let last = self.next_start - self.cfg.infer_step;
            if last + w < n {
                self.score(&[n - w], threshold, &mut events)?;
            }
        }
        self.finished = true;
        if self.windows_scored() > self.confirmed {
            let i = self.windows_scored() - 1;
            let label = self.thresholded(i);
            self.confirm(i, label, &mut events);
        }
        if let Some(r) = self.merger.finish() {
            self.closed.push(r.to_raw(self.cfg.downsample_factor));
        }
        self.update_status(&mut events);
        Ok(events)
    }

    fn window(&self, i: usize) -> &WindowPrediction {
        &self.windows[i - self.window_base]
    }

    fn thresholded(&self, i: usize) -> bool {
        self.window(i).thresholded
    }

    fn score(&mut self, starts: &[usize], threshold: f64, events: &mut Vec<DetectorEvent>) -> Result<()> {
        if starts.is_empty() {
            return Ok(());
        }
        let w = self.cfg.window_size;
        let scale = self.cfg.normalization_scale_pa;
        let (a, b) = self.ds.as_slices();
        let values: Vec<Vec<f32>> = starts
            .iter()
            .map(|&s| {
                let lo = s - self.ds_offset;
                let raw: Vec<f32> = if lo + w <= a.len() {
                    a[lo..lo + w].to_vec()
                } else if lo >= a.len() {
                    b[lo - a.len()..lo - a.len() + w].to_vec()
                } else {
                    a[lo..].iter().chain(&b[..lo + w - a.len()]).copied().collect()
                };
                normalize(&raw, scale)
            })
            .collect();
        let batch: Vec<&[f32]> = values.iter().map(Vec::as_slice).collect();
        let probs = self.model.predict(&batch, Exec::Sequential)?;
        for (&s, p) in starts.iter().zip(probs) {
            let probability = f64::from(p);
            let t = probability >= threshold;
            self.windows.push_back(WindowPrediction {
                ds_start: s,
                ds_end: s + w,
                probability,
                thresholded: t,
                label: t,
            });
            // A new right neighbour finalizes the previous window.
            let i = self.windows_scored() - 1;
            if i >= 1 {
                let j = i - 1;
                let label = if j == 0 {
                    self.thresholded(0)
                } else {
                    smooth_one(self.thresholded(j - 1), self.thresholded(j), self.thresholded(i))
                };
                self.confirm(j, label, events);
            }
        }
        Ok(())
    }

    fn confirm(&mut self, i: usize, label: bool, events: &mut Vec<DetectorEvent>) {
        debug_assert_eq!(i, self.confirmed);
        self.confirmed = i + 1;
        let idx = i - self.window_base;
        self.windows[idx].label = label;
        if !label {
            return;
        }
        let win = self.windows[idx];
        let factor = self.cfg.downsample_factor;
        if let Some(done) = self.merger.push(win.ds_start, win.ds_end, win.probability) {
            self.closed.push(done.to_raw(factor));
        }
        let current = self.merger.current().expect("just pushed");
        events.push(DetectorEvent::Region(current.to_raw(factor)));
    }

    fn update_status(&mut self, events: &mut Vec<DetectorEvent>) {
        // Judged only once a full dead-pore window has been seen.
        if self.ds_len() < self.dead_points {
            return;
        }
        let tail = self.ds.len().saturating_sub(self.dead_points);
        let Some(p) = abs_percentile(self.ds.range(tail..).copied(), self.dead.percentile) else {
            return;
        };
        let status = if (p as f64) < self.dead.threshold_pa {
            ChannelStatus::Dead
        } else if self.capture_near_frontier() {
            ChannelStatus::Capture
        } else {
            ChannelStatus::Active
        };
        if status != self.status {
            self.status = status;
            events.push(DetectorEvent::Status(status));
        }
    }

    /// Whether a confirmed region overlaps the trailing dead-pore span that
    /// ends at the last confirmed window.
    fn capture_near_frontier(&self) -> bool {
        if self.confirmed == 0 {
            return false;
        }
        let frontier = self.window(self.confirmed - 1).ds_end;
        let from = frontier.saturating_sub(self.dead_points);
        let factor = self.cfg.downsample_factor;
        let overlaps = |start_ds: usize, end_ds: usize| start_ds < frontier && end_ds > from;
        self.merger.current().is_some_and(|r| overlaps(r.ds_start, r.ds_end))
            || self
                .closed
                .last()
                .is_some_and(|r| overlaps(r.start_raw / factor, r.end_raw / factor))
    }

    fn trim(&mut self) {
        let excess = self.ds.len().saturating_sub(self.retain);
        // Never drop points the next window (or the tail window) still needs.
        let keep_from = self.next_start.min(self.ds_len().saturating_sub(self.cfg.window_size));
        let drop = excess.min(keep_from.saturating_sub(self.ds_offset));
        if drop > 0 {
            self.ds.drain(..drop);
            self.ds_offset += drop;
        }
        // Keep the windows still needed for smoothing, plus those in view.
        while self.windows.len() > 2
            && self.window_base + 2 < self.confirmed
            && self.windows[0].ds_end <= self.ds_offset
        {
            self.windows.pop_front();
            self.window_base += 1;
        }
    }
}
