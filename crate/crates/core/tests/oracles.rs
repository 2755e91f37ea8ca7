//! Frozen reference values.

use capdet_core::metrics::{evaluate, maximize_score};
use capdet_core::nn::{init_model, DEEP_POOL_PRODUCT};
use capdet_core::postprocess::smooth_labels;
use capdet_core::preprocess::{window_starts, Tail};
use capdet_core::train::{split_runs, Hyperparams, ModelKind, DEFAULT_SPLIT_FRACTIONS};
use capdet_core::types::{train_step_for, DetectorConfig};

/// (model, accuracy, precision, recall, f1, printed maximize score)
const COMPARISON_TABLE: [(&str, f64, f64, f64, f64, f64); 7] = [
    ("CaptureNet-Deep", 93.19, 93.39, 95.39, 0.94, 93.84),
    ("CaptureCNNWithLSTM", 91.75, 94.36, 91.78, 0.93, 93.11),
    ("RandomForestHistogram", 91.95, 92.33, 94.34, 0.93, 92.85),
    ("HistogramCaptureClassifier", 91.24, 91.40, 93.88, 0.92, 92.04),
    ("FPNCaptureDetector", 90.82, 92.23, 92.20, 0.92, 91.97),
    ("CaptureCNNnet", 90.73, 91.37, 93.17, 0.92, 91.73),
    ("SpikeClassifier", 82.16, 78.07, 96.92, 0.86, 83.64),
];

#[test]
fn maximize_score_of_best_model() {
    let s = maximize_score(93.19, 93.39, 95.39, 0.94);
    assert!((s - 93.82).abs() <= 0.15, "{s}");
    assert!((s - 93.8214).abs() < 1e-3, "{s}");
}

/// F1 is printed to two decimals, so the recomputed score can be off by up
/// to 2 * 0.5 / 7 ~ 0.143 from the printed one.
#[test]
fn maximize_score_matches_every_table_row() {
    for (name, a, p, r, f1, printed) in COMPARISON_TABLE {
        let s = maximize_score(a, p, r, f1);
        assert!((s - printed).abs() <= 0.15, "{name}: {s} vs {printed}");
    }
}

#[test]
fn training_defaults() {
    let hp = Hyperparams::default();
    assert_eq!(hp.model, ModelKind::CapturenetDeep);
    assert_eq!(hp.window_size, 2000);
    assert_eq!(hp.batch_size, 128);
    assert_eq!(hp.lr, 1.83e-4);
    assert_eq!(hp.weight_decay, 3.32e-3);
    assert_eq!(hp.dropout, 0.739);
    assert_eq!(hp.threshold, 0.524);
    let cfg = hp.detector_config();
    assert_eq!(cfg.downsample_factor, 100);
    assert_eq!(cfg.train_step, 2200);
    assert_eq!(cfg.infer_step, 2000);
    assert_eq!(cfg.threshold, 0.524);
}

#[test]
fn window_arithmetic() {
    // 6e6 raw samples -> 60_000 downsampled points.
    let n = 6_000_000 / 100;
    assert_eq!(window_starts(n, 2000, 2000, Tail::EndAligned).unwrap().len(), 30);
    assert_eq!(window_starts(n, 2000, 2200, Tail::Drop).unwrap().len(), 27);
    // 4.5e6 raw samples -> 45_000 points: 22 regular windows plus the tail.
    let starts = window_starts(45_000, 2000, 2000, Tail::EndAligned).unwrap();
    assert_eq!(starts.len(), 23);
    assert_eq!(*starts.last().unwrap(), 43_000);
    // 200_000 raw samples hold exactly one window.
    assert_eq!(window_starts(2000, 2000, 2000, Tail::EndAligned).unwrap(), vec![0]);
    assert_eq!(DetectorConfig::default().window_raw_len(), 200_000);
    assert_eq!(train_step_for(2000), 2200);
    assert_eq!(train_step_for(1040), 1144);
}

#[test]
fn deep_model_topology() {
    assert_eq!(DEEP_POOL_PRODUCT, 80);
    assert_eq!(2000 / DEEP_POOL_PRODUCT, 25);
    assert!(init_model::<f32>(2000, 0.739, 0).is_ok());
    assert!(init_model::<f32>(2001, 0.739, 0).is_err());
}

#[test]
fn smoothing_worked_examples() {
    assert_eq!(smooth_labels(&[false, true, false]), vec![false, false, false]);
    assert_eq!(smooth_labels(&[true, false, true]), vec![true, true, true]);
}

#[test]
fn split_sizes() {
    for (n, sizes) in [(17, (12, 3, 2)), (20, (14, 4, 2)), (10, (7, 2, 1))] {
        let ids: Vec<String> = (0..n).map(|i| format!("r{i}")).collect();
        let s = split_runs(&ids, DEFAULT_SPLIT_FRACTIONS, 0).unwrap();
        assert_eq!((s.train.len(), s.val.len(), s.test.len()), sizes, "n = {n}");
    }
}

#[test]
fn metric_counts() {
    let p = [true, true, false, false, true];
    let t = [true, false, false, true, true];
    let m = evaluate(&p, &t).unwrap();
    assert_eq!((m.tp, m.fp, m.tn, m.fn_), (2, 1, 1, 1));
    assert!((m.accuracy - 60.0).abs() < 1e-12);
    assert!((m.precision - 200.0 / 3.0).abs() < 1e-12);
    assert!((m.recall - 200.0 / 3.0).abs() < 1e-12);
    assert!((m.f1 - 2.0 / 3.0).abs() < 1e-12);
}
