//! Window-level classification metrics and the model-selection score.

use crate::error::{Error, Result};
use crate::types::{CaptureAnnotation, CaptureRegion, MetricsReport};

/// Confusion counts and derived metrics. Precision, recall and F1 are
/// defined as 0 when their denominator is 0.
pub fn evaluate(preds: &[bool], truth: &[bool]) -> Result<MetricsReport> {
    if preds.len() != truth.len() {
        return Err(Error::LengthMismatch {
            left: preds.len(),
            right: truth.len(),
        });
    }
    if preds.is_empty() {
        return Err(Error::InvalidConfig("nothing to evaluate".into()));
    }
    let (mut tp, mut fp, mut tn, mut fn_) = (0u64, 0u64, 0u64, 0u64);
    for (&p, &t) in preds.iter().zip(truth) {
        match (p, t) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, false) => tn += 1,
            (false, true) => fn_ += 1,
        }
    }
    Ok(report_from_counts(tp, fp, tn, fn_))
}

pub fn report_from_counts(tp: u64, fp: u64, tn: u64, fn_: u64) -> MetricsReport {
    let pct = |num: u64, den: u64| if den == 0 { 0.0 } else { 100.0 * num as f64 / den as f64 };
    let accuracy = pct(tp + tn, tp + fp + tn + fn_);
    let precision = pct(tp, tp + fp);
    let recall = pct(tp, tp + fn_);
    // Harmonic mean of precision and recall, from counts.
    let f1 = if tp == 0 { 0.0 } else { (2 * tp) as f64 / (2 * tp + fp + fn_) as f64 };
    MetricsReport {
        accuracy,
        precision,
        recall,
        f1,
        maximize_score: maximize_score(accuracy, precision, recall, f1),
        tp,
        fp,
        tn,
        fn_,
    }
}

/// `(acc + 3 prec + rec + 2 * 100 f1) / 7` with acc/prec/rec in percent and
/// F1 on the unit scale.
pub fn maximize_score(accuracy: f64, precision: f64, recall: f64, f1: f64) -> f64 {
    (accuracy + 3.0 * precision + recall + 2.0 * (f1 * 100.0)) / 7.0
}

/// Mean over annotations of the best IoU with any predicted region.
/// Returns 1 when both lists are empty and 0 when only one is.
pub fn mean_interval_iou(predicted: &[CaptureRegion], truth: &[CaptureAnnotation]) -> f64 {
    match (predicted.is_empty(), truth.is_empty()) {
        (true, true) => return 1.0,
        (_, true) | (true, _) => return 0.0,
        _ => {}
    }
    let iou = |a: &CaptureAnnotation, r: &CaptureRegion| {
        let inter = a.end_raw.min(r.end_raw).saturating_sub(a.start_raw.max(r.start_raw));
        let union = a.end_raw.max(r.end_raw) - a.start_raw.min(r.start_raw);
        inter as f64 / union as f64
    };
    truth
        .iter()
        .map(|a| predicted.iter().map(|r| iou(a, r)).fold(0.0, f64::max))
        .sum::<f64>()
        / truth.len() as f64
}
