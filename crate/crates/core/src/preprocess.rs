//! Downsampling, normalization, windowing and window labels.

use std::ops::Range;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::types::{CaptureAnnotation, DetectorConfig, DownsampleMethod, Trace};

/// A fixed-length slice of a normalized, downsampled trace.
#[derive(Clone, Debug, PartialEq)]
pub struct Window {
    pub run_id: Arc<str>,
    pub channel: u16,
    /// Downsampled index of the first value (inclusive).
    pub ds_start: usize,
    pub values: Vec<f32>,
    pub label: Option<bool>,
}

impl Window {
    pub fn ds_range(&self) -> Range<usize> {
        self.ds_start..self.ds_start + self.values.len()
    }

    /// The window's span in raw-sample coordinates.
    pub fn raw_range(&self, factor: usize) -> Range<usize> {
        let ds = self.ds_range();
        ds.start * factor..ds.end * factor
    }
}

/// What to do with the part of the trace the regular grid does not reach.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Tail {
    /// Append one window aligned to the end of the trace (inference).
    EndAligned,
    /// Ignore the remainder (training).
    Drop,
}

/// Block-mean downsampling. The trailing partial block is discarded.
pub fn downsample(samples: &[f32], factor: usize) -> Result<Vec<f32>> {
    downsample_with(samples, factor, DownsampleMethod::BlockMean)
}

pub fn downsample_with(samples: &[f32], factor: usize, method: DownsampleMethod) -> Result<Vec<f32>> {
    if samples.is_empty() {
        return Err(Error::EmptyTrace);
    }
    if factor == 0 {
        return Err(Error::InvalidConfig("downsample factor must be at least 1".into()));
    }
    Ok(samples.chunks_exact(factor).map(|b| reduce_block(b, method)).collect())
}

/// One downsampled point from one full block.
pub fn reduce_block(block: &[f32], method: DownsampleMethod) -> f32 {
    match method {
        DownsampleMethod::BlockMean => block_mean(block),
        DownsampleMethod::Stride => block[0],
    }
}

/// Mean of one block, accumulated in f64.
pub fn block_mean(block: &[f32]) -> f32 {
    let sum: f64 = block.iter().map(|&v| v as f64).sum();
    (sum / block.len() as f64) as f32
}

/// Fixed global scaling; no centering, so absolute current levels survive.
pub fn normalize(values: &[f32], scale_pa: f64) -> Vec<f32> {
    let inv = (1.0 / scale_pa) as f32;
    values.iter().map(|&v| v * inv).collect()
}

pub fn normalize_in_place(values: &mut [f32], scale_pa: f64) {
    let inv = (1.0 / scale_pa) as f32;
    values.iter_mut().for_each(|v| *v *= inv);
}

/// Start offsets of the windows covering `n` points.
///
/// Regular starts are `0, step, 2*step, ...` while the window fits. With
/// [`Tail::EndAligned`], one more window `[n - window, n)` is added when the
/// last regular window stops short of `n`.
pub fn window_starts(n: usize, window_size: usize, step: usize, tail: Tail) -> Result<Vec<usize>> {
    if window_size == 0 || step == 0 {
        return Err(Error::InvalidConfig("window size and step must be positive".into()));
    }
    if n < window_size {
        return Err(Error::TraceTooShort {
            len: n,
            window: window_size,
        });
    }
    let mut starts: Vec<usize> = (0..=n - window_size).step_by(step).collect();
    if tail == Tail::EndAligned {
        let last = *starts.last().expect("at least one regular window");
        if last + window_size < n {
            starts.push(n - window_size);
        }
    }
    Ok(starts)
}

/// Cuts inference windows (with end-aligned tail) out of a downsampled signal.
pub fn make_windows(ds_values: &[f32], window_size: usize, step: usize) -> Result<Vec<Window>> {
    cut_windows(ds_values, window_size, step, Tail::EndAligned, Arc::from(""), 0)
}

pub fn cut_windows(
    ds_values: &[f32],
    window_size: usize,
    step: usize,
    tail: Tail,
    run_id: Arc<str>,
    channel: u16,
) -> Result<Vec<Window>> {
    let starts = window_starts(ds_values.len(), window_size, step, tail)?;
    Ok(starts
        .into_iter()
        .map(|s| Window {
            run_id: Arc::clone(&run_id),
            channel,
            ds_start: s,
            values: ds_values[s..s + window_size].to_vec(),
            label: None,
        })
        .collect())
}

/// Downsampled and normalized signal for a trace.
pub fn prepare_signal(trace: &Trace, cfg: &DetectorConfig) -> Result<Vec<f32>> {
    let mut ds = downsample_with(&trace.samples, cfg.downsample_factor, cfg.downsample_method)?;
    normalize_in_place(&mut ds, cfg.normalization_scale_pa);
    Ok(ds)
}

/// Training windows (regular `train_step` grid, tail dropped) labelled
/// against the run's annotations.
pub fn training_windows(
    trace: &Trace,
    annotations: &[CaptureAnnotation],
    cfg: &DetectorConfig,
) -> Result<Vec<Window>> {
    let ds = prepare_signal(trace, cfg)?;
    let mut windows = cut_windows(
        &ds,
        cfg.window_size,
        cfg.train_step,
        Tail::Drop,
        Arc::from(trace.run_id.as_str()),
        trace.channel,
    )?;
    for w in &mut windows {
        w.label = Some(label_window(w.raw_range(cfg.downsample_factor), annotations));
    }
    Ok(windows)
}

/// Total number of samples of `interval` covered by the (sorted, disjoint)
/// annotations.
pub fn overlap_len(interval: &Range<usize>, annotations: &[CaptureAnnotation]) -> usize {
    // Skip annotations that end before the interval starts.
    let first = annotations.partition_point(|a| a.end_raw <= interval.start);
    annotations[first..]
        .iter()
        .take_while(|a| a.start_raw < interval.end)
        .map(|a| a.end_raw.min(interval.end) - a.start_raw.max(interval.start))
        .sum()
}

/// A window is a capture window when at least half of it lies inside
/// annotated capture phases.
pub fn label_window(window_raw: Range<usize>, annotations: &[CaptureAnnotation]) -> bool {
    let len = window_raw.end.saturating_sub(window_raw.start);
    if len == 0 {
        return false;
    }
    2 * overlap_len(&window_raw, annotations) >= len
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn downsample_examples() {
        assert_eq!(downsample(&[1.0, 2.0, 3.0, 4.0], 2).unwrap(), vec![1.5, 3.5]);
        assert_eq!(downsample(&[5.0, 5.0, 5.0], 1).unwrap(), vec![5.0, 5.0, 5.0]);
        assert_eq!(downsample(&[1.0, 2.0, 3.0], 2).unwrap(), vec![1.5]);
        assert!(matches!(downsample(&[], 2), Err(Error::EmptyTrace)));
        assert_eq!(
            downsample_with(&[1.0, 2.0, 3.0, 4.0], 2, DownsampleMethod::Stride).unwrap(),
            vec![1.0, 3.0]
        );
    }

    #[test]
    fn downsample_full_run_length() {
        let samples = vec![180.0f32; 6_000_000];
        let ds = downsample(&samples, 100).unwrap();
        assert_eq!(ds.len(), 60_000);
        assert!(ds.iter().all(|&v| v == 180.0));
    }

    #[test]
    fn normalize_examples() {
        let out = normalize(&[180.0, 20.0, 5.0], 200.0);
        for (got, want) in out.iter().zip([0.9f32, 0.1, 0.025]) {
            assert!((got - want).abs() < 1e-7, "{got} vs {want}");
        }
        assert_eq!(normalize(&[0.0], 200.0), vec![0.0]);
        assert_eq!(normalize(&[200.0], 200.0), vec![1.0]);
    }

    #[test]
    fn window_grid_examples() {
        let starts = window_starts(60_000, 2000, 2000, Tail::EndAligned).unwrap();
        assert_eq!(starts.len(), 30);
        assert_eq!(starts[0], 0);
        assert_eq!(*starts.last().unwrap(), 58_000);
        assert!(starts.windows(2).all(|p| p[1] - p[0] == 2000));

        let starts = window_starts(60_000, 2000, 2200, Tail::EndAligned).unwrap();
        assert_eq!(starts.len(), 28);
        assert_eq!(starts[26], 57_200);
        assert_eq!(starts[27], 58_000);

        let starts = window_starts(60_000, 2000, 2200, Tail::Drop).unwrap();
        assert_eq!(starts.len(), 27);

        assert_eq!(window_starts(2000, 2000, 2000, Tail::EndAligned).unwrap(), vec![0]);
        assert!(matches!(
            window_starts(1999, 2000, 2000, Tail::EndAligned),
            Err(Error::TraceTooShort { .. })
        ));
    }

    #[test]
    fn make_windows_copies_values() {
        let ds: Vec<f32> = (0..10).map(|v| v as f32).collect();
        let ws = make_windows(&ds, 4, 4).unwrap();
        assert_eq!(ws.len(), 3);
        assert_eq!(ws[2].ds_start, 6);
        assert_eq!(ws[2].values, vec![6.0, 7.0, 8.0, 9.0]);
    }

    #[test]
    fn label_examples() {
        let a = [CaptureAnnotation::new(100_000, 300_000)];
        assert!(label_window(0..200_000, &a));
        assert!(!label_window(0..200_000, &[]));
        assert!(label_window(0..200_000, &[CaptureAnnotation::new(0, 200_000)]));
        assert!(!label_window(0..200_000, &[CaptureAnnotation::new(100_001, 300_000)]));
        // Overlap is summed over the union of annotations.
        let split = [CaptureAnnotation::new(0, 50_000), CaptureAnnotation::new(150_000, 200_000)];
        assert!(label_window(0..200_000, &split));
    }

    fn brute_overlap(interval: &Range<usize>, annotations: &[CaptureAnnotation]) -> usize {
        interval
            .clone()
            .filter(|&i| annotations.iter().any(|a| (a.start_raw..a.end_raw).contains(&i)))
            .count()
    }

    fn arb_annotations() -> impl Strategy<Value = Vec<CaptureAnnotation>> {
        prop::collection::vec((0usize..40, 1usize..40), 0..6).prop_map(|gaps| {
            let mut out = Vec::new();
            let mut pos = 0;
            for (gap, len) in gaps {
                let start = pos + gap;
                out.push(CaptureAnnotation::new(start, start + len));
                pos = start + len;
            }
            out
        })
    }

    proptest! {
        #[test]
        fn block_mean_is_conserved(values in prop::collection::vec(-300.0f32..300.0, 1..500), factor in 1usize..20) {
            let ds = downsample(&values, factor).unwrap();
            let kept = ds.len() * factor;
            prop_assume!(kept > 0);
            let raw_mean: f64 = values[..kept].iter().map(|&v| v as f64).sum::<f64>() / kept as f64;
            let ds_mean: f64 = ds.iter().map(|&v| v as f64).sum::<f64>() / ds.len() as f64;
            // Each block mean is stored as f32: at most half an ulp of its magnitude.
            let max_abs = values.iter().fold(0.0f64, |m, &v| m.max((v as f64).abs()));
            prop_assert!((raw_mean - ds_mean).abs() <= f32::EPSILON as f64 * max_abs + 1e-12);
        }

        #[test]
        fn inference_windows_cover_every_index(n in 1usize..3000, window in 1usize..500, step_frac in 0.0f64..1.0) {
            prop_assume!(window <= n);
            let step = 1 + ((window - 1) as f64 * step_frac) as usize;
            let starts = window_starts(n, window, step, Tail::EndAligned).unwrap();
            let mut covered = vec![false; n];
            for s in &starts {
                prop_assert!(s + window <= n);
                covered[*s..s + window].iter_mut().for_each(|c| *c = true);
            }
            prop_assert!(covered.iter().all(|&c| c));
            prop_assert!(starts.windows(2).all(|p| p[0] < p[1]));
        }

        #[test]
        fn overlap_matches_brute_force(annotations in arb_annotations(), start in 0usize..200, len in 1usize..120) {
            let iv = start..start + len;
            prop_assert_eq!(overlap_len(&iv, &annotations), brute_overlap(&iv, &annotations));
        }

        #[test]
        fn labels_are_monotone_in_annotation_size(annotations in arb_annotations(), start in 0usize..200, len in 1usize..120, grow in 0usize..30, which in 0usize..6) {
            prop_assume!(!annotations.is_empty());
            let iv = start..start + len;
            let before = label_window(iv.clone(), &annotations);
            let mut grown = annotations.clone();
            let k = which % grown.len();
            // Grow annotation k to the right without overlapping its successor.
            let limit = grown.get(k + 1).map(|a| a.start_raw).unwrap_or(usize::MAX);
            grown[k].end_raw = (grown[k].end_raw + grow).min(limit);
            let after = label_window(iv, &grown);
            prop_assert!(!(before && !after));
        }
    }
}
