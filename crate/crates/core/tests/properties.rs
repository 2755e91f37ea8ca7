use std::collections::HashSet;

use capdet_core::metrics::evaluate;
use capdet_core::postprocess::{aggregate_regions, label_windows, smooth_labels};
use capdet_core::preprocess::{downsample, window_starts, Tail};
use capdet_core::train::{split_runs, DEFAULT_SPLIT_FRACTIONS};
use proptest::prelude::*;

fn brute_force(p: &[bool], t: &[bool]) -> (u64, u64, u64, u64) {
    let mut c = (0, 0, 0, 0);
    for (&p, &t) in p.iter().zip(t) {
        match (p, t) {
            (true, true) => c.0 += 1,
            (true, false) => c.1 += 1,
            (false, false) => c.2 += 1,
            (false, true) => c.3 += 1,
        }
    }
    c
}

fn pct(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        100.0 * num as f64 / den as f64
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(512))]

    #[test]
    fn smoothing_is_a_simultaneous_flip(v in prop::collection::vec(any::<bool>(), 1..50)) {
        let out = smooth_labels(&v);
        prop_assert_eq!(out.len(), v.len());
        prop_assert_eq!(out[0], v[0]);
        prop_assert_eq!(out[v.len() - 1], v[v.len() - 1]);
        for i in 1..v.len().saturating_sub(1) {
            let expect = if v[i - 1] == v[i + 1] { v[i - 1] } else { v[i] };
            prop_assert_eq!(out[i], expect, "index {}", i);
        }
    }

    #[test]
    fn evaluate_matches_brute_force(pairs in prop::collection::vec((any::<bool>(), any::<bool>()), 1..300)) {
        let (p, t): (Vec<bool>, Vec<bool>) = pairs.into_iter().unzip();
        let m = evaluate(&p, &t).unwrap();
        let (tp, fp, tn, fn_) = brute_force(&p, &t);
        prop_assert_eq!((m.tp, m.fp, m.tn, m.fn_), (tp, fp, tn, fn_));
        prop_assert_eq!(m.accuracy, pct(tp + tn, p.len() as u64));
        prop_assert_eq!(m.precision, pct(tp, tp + fp));
        prop_assert_eq!(m.recall, pct(tp, tp + fn_));
        let f1 = if tp == 0 { 0.0 } else { 2.0 * tp as f64 / (2 * tp + fp + fn_) as f64 };
        prop_assert_eq!(m.f1, f1);
    }

    #[test]
    fn splits_partition_the_ids(n in 3usize..60, seed in any::<u64>()) {
        let ids: Vec<String> = (0..n).map(|i| format!("run{i}")).collect();
        let s = split_runs(&ids, DEFAULT_SPLIT_FRACTIONS, seed).unwrap();
        let all: HashSet<&String> = s.train.iter().chain(&s.val).chain(&s.test).collect();
        prop_assert_eq!(all.len(), n);
        prop_assert_eq!(s.train.len() + s.val.len() + s.test.len(), n);
        prop_assert!(!s.val.is_empty() && !s.test.is_empty());
    }

    #[test]
    fn inference_windows_cover_the_signal(n in 1usize..5000, w in 1usize..600) {
        prop_assume!(w <= n);
        let starts = window_starts(n, w, w, Tail::EndAligned).unwrap();
        let mut covered = vec![false; n];
        for s in &starts {
            prop_assert!(s + w <= n);
            covered[*s..s + w].iter_mut().for_each(|c| *c = true);
        }
        prop_assert!(covered.into_iter().all(|c| c));
    }

    #[test]
    fn downsampled_length_is_floor(len in 0usize..3000, factor in 1usize..150) {
        let x: Vec<f32> = (0..len).map(|i| (i % 17) as f32).collect();
        prop_assert_eq!(downsample(&x, factor).unwrap().len(), len / factor);
    }

    #[test]
    fn regions_only_cover_smoothed_positives(probs in prop::collection::vec(0.0f64..1.0, 1..60), t in 0.05f64..0.95) {
        let starts: Vec<usize> = (0..probs.len()).map(|i| i * 10).collect();
        let preds = label_windows(&starts, 10, &probs, t);
        let regions = aggregate_regions(&preds, 100);
        for r in &regions {
            prop_assert!(r.start_raw < r.end_raw);
            prop_assert!((0.0..=1.0).contains(&r.confidence));
        }
        prop_assert!(regions.windows(2).all(|w| w[0].end_raw < w[1].start_raw));
        let positive: usize = preds.iter().filter(|p| p.label).count() * 1000;
        let covered: usize = regions.iter().map(|r| r.end_raw - r.start_raw).sum();
        prop_assert_eq!(covered, positive);
    }
}

#[test]
fn degenerate_metric_inputs() {
    for n in [1usize, 5, 40] {
        for (p, t) in [(true, true), (true, false), (false, true), (false, false)] {
            let m = evaluate(&vec![p; n], &vec![t; n]).unwrap();
            let (tp, fp, tn, fn_) = brute_force(&vec![p; n], &vec![t; n]);
            assert_eq!((m.tp, m.fp, m.tn, m.fn_), (tp, fp, tn, fn_));
            assert!(m.f1.is_finite() && m.maximize_score.is_finite());
        }
    }
    assert!(evaluate(&[], &[]).is_err());
    assert!(evaluate(&[true], &[true, false]).is_err());
}
