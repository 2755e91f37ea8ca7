//! Histogram-feature baseline: a logistic model over the distribution of
//! current values in a window, trained with the same BCE/AdamW code as the
//! CNN.

use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::nn::{self, adamw_step, AdamWConfig, Architecture, HistogramSpec, Mode, ModelParams, OptimizerState};

pub const DEFAULT_BIN_COUNT: usize = 50;
pub const DEFAULT_RANGE_PA: [f64; 2] = [0.0, 250.0];
/// Mean, standard deviation, minimum and maximum.
pub const SUMMARY_STATS: usize = 4;

#[derive(Clone, Debug, PartialEq)]
pub struct HistogramFeatures {
    /// Fraction of samples per bin; sums to 1.
    pub counts: Vec<f64>,
    /// Summary statistics in normalized units (pA / scale).
    pub mean: f64,
    pub std: f64,
    pub min: f64,
    pub max: f64,
}

impl HistogramFeatures {
    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = self.counts.clone();
        v.extend([self.mean, self.std, self.min, self.max]);
        v
    }
}

/// Histogram over `range_pa` (values outside are clipped into the edge
/// bins) plus summary statistics, with the default 200 pA normalization.
pub fn featurize(window_pa: &[f32], bin_count: usize, range_pa: [f64; 2]) -> HistogramFeatures {
    let values: Vec<f64> = window_pa.iter().map(|&v| v as f64).collect();
    featurize_f64(&values, bin_count, range_pa, crate::types::DEFAULT_NORMALIZATION_SCALE_PA)
}

pub fn featurize_f64(values_pa: &[f64], bin_count: usize, range_pa: [f64; 2], scale_pa: f64) -> HistogramFeatures {
    let [lo, hi] = range_pa;
    let width = (hi - lo) / bin_count as f64;
    let mut counts = vec![0.0; bin_count];
    let (mut sum, mut min, mut max) = (0.0, f64::INFINITY, f64::NEG_INFINITY);
    for &v in values_pa {
        let clipped = v.clamp(lo, hi);
        let bin = (((clipped - lo) / width) as usize).min(bin_count - 1);
        counts[bin] += 1.0;
        sum += v;
        min = min.min(v);
        max = max.max(v);
    }
    let n = values_pa.len().max(1) as f64;
    counts.iter_mut().for_each(|c| *c /= n);
    let mean = sum / n;
    let var = values_pa.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    HistogramFeatures {
        counts,
        mean: mean / scale_pa,
        std: var.sqrt() / scale_pa,
        min: if values_pa.is_empty() { 0.0 } else { min / scale_pa },
        max: if values_pa.is_empty() { 0.0 } else { max / scale_pa },
    }
}

/// A fresh (zero-weight) baseline model for normalized windows.
pub fn init_baseline(bin_count: usize, scale_pa: f64, seed: u64) -> Result<ModelParams<f32>> {
    nn::init_with(Architecture::HistogramLogistic(HistogramSpec::new(bin_count, scale_pa)), seed)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BaselineTrainConfig {
    pub epochs: usize,
    pub optimizer: AdamWConfig,
}

impl Default for BaselineTrainConfig {
    fn default() -> Self {
        BaselineTrainConfig {
            epochs: 200,
            optimizer: AdamWConfig::new(0.05, 0.0),
        }
    }
}

/// Full-batch training of the logistic layer directly on precomputed
/// feature vectors (each of length `bin_count + 4`).
pub fn train_baseline(
    features: &[Vec<f64>],
    labels: &[bool],
    bin_count: usize,
    cfg: BaselineTrainConfig,
) -> Result<ModelParams<f64>> {
    if features.len() != labels.len() {
        return Err(Error::LengthMismatch {
            left: features.len(),
            right: labels.len(),
        });
    }
    if features.is_empty() {
        return Err(Error::InvalidConfig("no training examples".into()));
    }
    let spec = HistogramSpec::new(bin_count, crate::types::DEFAULT_NORMALIZATION_SCALE_PA);
    if let Some(f) = features.iter().find(|f| f.len() != spec.feature_len()) {
        return Err(Error::LengthMismatch {
            left: f.len(),
            right: spec.feature_len(),
        });
    }
    let mut params: ModelParams<f64> = nn::init_with(Architecture::HistogramLogistic(spec), 0)?;
    let mut state = OptimizerState::new(&params, cfg.optimizer);
    let n = features.len() as f64;
    for _ in 0..cfg.epochs {
        let mut grads = params.zero_grads();
        for (f, &y) in features.iter().zip(labels) {
            let p = nn::sigmoid(logit(&params, f));
            let d = nn::loss::bce_logit_grad(p, y as u8 as f64) / n;
            for (g, &x) in grads[0].iter_mut().zip(f) {
                *g += d * x;
            }
            grads[1][0] += d;
        }
        adamw_step(&mut params, &grads, &mut state)?;
    }
    Ok(params)
}

fn logit(params: &ModelParams<f64>, features: &[f64]) -> f64 {
    params.tensors[1].data[0]
        + params.tensors[0]
            .data
            .iter()
            .zip(features)
            .map(|(w, x)| w * x)
            .sum::<f64>()
}

/// Probabilities for precomputed feature vectors.
pub fn predict_baseline(params: &ModelParams<f64>, features: &[Vec<f64>]) -> Vec<f64> {
    features.iter().map(|f| nn::sigmoid(logit(params, f))).collect()
}

/// Probabilities for normalized windows (the path detection uses).
pub fn predict_windows(params: &ModelParams<f32>, windows: &[&[f32]], exec: Exec) -> Result<Vec<f32>> {
    params.forward(windows, Mode::Eval, exec)
}
