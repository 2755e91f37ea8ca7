//! Per-window probabilities to capture regions: threshold, smooth, merge.

use serde::{Deserialize, Serialize};

use crate::types::CaptureRegion;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WindowPrediction {
    pub ds_start: usize,
    pub ds_end: usize,
    pub probability: f64,
    /// Label after thresholding, before smoothing.
    pub thresholded: bool,
    /// Final label after smoothing; drives region aggregation.
    pub label: bool,
}

/// `probability >= threshold`.
pub fn threshold_labels(probs: &[f64], threshold: f64) -> Vec<bool> {
    probs.iter().map(|&p| p >= threshold).collect()
}

/// One simultaneous pass: an interior label whose two neighbours agree with
/// each other but not with it takes their value. Every decision reads the
/// input sequence, so `[1, 0, 1, 0, 1]` becomes `[1, 1, 0, 1, 1]`.
/// Endpoints never change. Not idempotent.
pub fn smooth_labels(labels: &[bool]) -> Vec<bool> {
    let mut out = labels.to_vec();
    for i in 1..labels.len().saturating_sub(1) {
        if labels[i - 1] == labels[i + 1] && labels[i] != labels[i - 1] {
            out[i] = labels[i - 1];
        }
    }
    out
}

/// Smoothed label of interior position `i` given its neighbourhood.
pub fn smooth_one(prev: bool, cur: bool, next: bool) -> bool {
    if prev == next && cur != prev {
        prev
    } else {
        cur
    }
}

/// Threshold, smooth and attach spans to window probabilities.
pub fn label_windows(starts: &[usize], window_size: usize, probs: &[f64], threshold: f64) -> Vec<WindowPrediction> {
    let thresholded = threshold_labels(probs, threshold);
    let smoothed = smooth_labels(&thresholded);
    starts
        .iter()
        .zip(probs)
        .zip(thresholded.iter().zip(&smoothed))
        .map(|((&s, &p), (&t, &l))| WindowPrediction {
            ds_start: s,
            ds_end: s + window_size,
            probability: p,
            thresholded: t,
            label: l,
        })
        .collect()
}

/// Merges the spans of label-1 windows (overlapping or touching spans join)
/// and maps them to raw coordinates. Each region's confidence is the mean
/// probability of its member windows.
pub fn aggregate_regions(preds: &[WindowPrediction], downsample_factor: usize) -> Vec<CaptureRegion> {
    let mut merger = RegionMerger::default();
    let mut out = Vec::new();
    for p in preds.iter().filter(|p| p.label) {
        if let Some(done) = merger.push(p.ds_start, p.ds_end, p.probability) {
            out.push(done.to_raw(downsample_factor));
        }
    }
    if let Some(done) = merger.finish() {
        out.push(done.to_raw(downsample_factor));
    }
    out
}

/// A region under construction, in downsampled coordinates.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OpenRegion {
    pub ds_start: usize,
    pub ds_end: usize,
    pub prob_sum: f64,
    pub members: usize,
}

impl OpenRegion {
    pub fn confidence(&self) -> f64 {
        self.prob_sum / self.members as f64
    }

    pub fn to_raw(&self, factor: usize) -> CaptureRegion {
        CaptureRegion {
            start_raw: self.ds_start * factor,
            end_raw: self.ds_end * factor,
            confidence: self.confidence(),
        }
    }
}

/// Incremental interval union over label-1 windows arriving in start
/// order. Shared by offline aggregation and the streaming detector.
#[derive(Clone, Debug, Default)]
pub struct RegionMerger {
    open: Option<OpenRegion>,
}

impl RegionMerger {
    /// Adds a positive window. Returns the previous region if this window
    /// does not touch it.
    pub fn push(&mut self, ds_start: usize, ds_end: usize, probability: f64) -> Option<OpenRegion> {
        match &mut self.open {
            Some(r) if ds_start <= r.ds_end => {
                r.ds_end = r.ds_end.max(ds_end);
                r.prob_sum += probability;
                r.members += 1;
                None
            }
            _ => self.open.replace(OpenRegion {
                ds_start,
                ds_end,
                prob_sum: probability,
                members: 1,
            }),
        }
    }

    /// The region currently being extended, if any.
    pub fn current(&self) -> Option<&OpenRegion> {
        self.open.as_ref()
    }

    /// Closes the open region if no window starting at or before
    /// `ds_position` can touch it any more.
    pub fn close_before(&mut self, ds_position: usize) -> Option<OpenRegion> {
        match self.open {
            Some(r) if r.ds_end < ds_position => self.open.take(),
            _ => None,
        }
    }

    pub fn finish(&mut self) -> Option<OpenRegion> {
        self.open.take()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn b(v: &[u8]) -> Vec<bool> {
        v.iter().map(|&x| x == 1).collect()
    }

    #[test]
    fn threshold_examples() {
        assert_eq!(threshold_labels(&[0.9, 0.1], 0.524), vec![true, false]);
        assert_eq!(threshold_labels(&[0.524], 0.524), vec![true]);
        assert!(threshold_labels(&[], 0.5).is_empty());
    }

    #[test]
    fn smoothing_examples() {
        assert_eq!(smooth_labels(&b(&[0, 1, 0])), b(&[0, 0, 0]));
        assert_eq!(smooth_labels(&b(&[1, 0, 1])), b(&[1, 1, 1]));
        assert_eq!(smooth_labels(&b(&[0, 0, 1, 0, 1, 0, 0])), b(&[0, 0, 0, 1, 0, 0, 0]));
        assert_eq!(smooth_labels(&b(&[1, 0, 1, 0, 1])), b(&[1, 1, 0, 1, 1]));
        assert_eq!(smooth_labels(&b(&[1])), b(&[1]));
        assert_eq!(smooth_labels(&b(&[1, 0])), b(&[1, 0]));
        assert!(smooth_labels(&[]).is_empty());
    }

    fn preds(labels: &[u8], window: usize, step: usize) -> Vec<WindowPrediction> {
        labels
            .iter()
            .enumerate()
            .map(|(i, &l)| WindowPrediction {
                ds_start: i * step,
                ds_end: i * step + window,
                probability: if l == 1 { 0.9 } else { 0.1 },
                thresholded: l == 1,
                label: l == 1,
            })
            .collect()
    }

    #[test]
    fn aggregation_examples() {
        let regions = aggregate_regions(&preds(&[0, 1, 1, 0], 2000, 2000), 100);
        assert_eq!(regions.len(), 1);
        assert_eq!((regions[0].start_raw, regions[0].end_raw), (200_000, 600_000));
        assert!((regions[0].confidence - 0.9).abs() < 1e-12);

        assert!(aggregate_regions(&preds(&[0, 0, 0], 2000, 2000), 100).is_empty());
        assert_eq!(aggregate_regions(&preds(&[1, 0, 1], 2000, 2000), 100).len(), 2);
        // Training-style gaps keep windows apart.
        assert_eq!(aggregate_regions(&preds(&[1, 1], 2000, 2200), 100).len(), 2);
    }

    #[test]
    fn overlapping_tail_window_merges() {
        // Tail window [5000, 7000) overlaps [4000, 6000).
        let mut p = preds(&[0, 0, 1], 2000, 2000);
        p.push(WindowPrediction {
            ds_start: 5000,
            ds_end: 7000,
            probability: 0.7,
            thresholded: true,
            label: true,
        });
        let r = aggregate_regions(&p, 100);
        assert_eq!(r.len(), 1);
        assert_eq!((r[0].start_raw, r[0].end_raw), (400_000, 700_000));
        assert!((r[0].confidence - 0.8).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn smoothing_follows_rule(v in prop::collection::vec(any::<bool>(), 1..50)) {
            let out = smooth_labels(&v);
            prop_assert_eq!(out.len(), v.len());
            prop_assert_eq!(out[0], v[0]);
            prop_assert_eq!(out[v.len() - 1], v[v.len() - 1]);
            for i in 1..v.len().saturating_sub(1) {
                let expect = if v[i - 1] == v[i + 1] && v[i] != v[i - 1] { v[i - 1] } else { v[i] };
                prop_assert_eq!(out[i], expect);
            }
        }

        #[test]
        fn regions_are_sorted_disjoint_and_cover_positives(labels in prop::collection::vec(0u8..2, 0..40), window in 1usize..20, factor in 1usize..5) {
            let p = preds(&labels, window, window);
            let regions = aggregate_regions(&p, factor);
            for r in &regions {
                prop_assert!(r.start_raw < r.end_raw);
                prop_assert!((0.0..=1.0).contains(&r.confidence));
            }
            for pair in regions.windows(2) {
                prop_assert!(pair[0].end_raw < pair[1].start_raw);
            }
            let total: usize = regions.iter().map(|r| r.end_raw - r.start_raw).sum();
            let positives = labels.iter().filter(|&&l| l == 1).count();
            prop_assert_eq!(total, factor * window * positives);
        }

        #[test]
        fn higher_threshold_never_adds_capture(probs in prop::collection::vec(0.0f64..1.0, 0..40), t1 in 0.01f64..0.99, t2 in 0.01f64..0.99) {
            let (lo, hi) = if t1 <= t2 { (t1, t2) } else { (t2, t1) };
            let count = |t| threshold_labels(&probs, t).iter().filter(|&&l| l).count();
            prop_assert!(count(hi) <= count(lo));
        }
    }
}
