use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use super::{real, Real, Tensor};
use crate::baseline;
use crate::error::{Error, Result};

/// Logistic regression over histogram features of a window.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HistogramSpec {
    pub bin_count: usize,
    pub range_pa: [f64; 2],
    /// Converts normalized window values back to picoamps.
    pub scale_pa: f64,
}

impl HistogramSpec {
    pub fn new(bin_count: usize, scale_pa: f64) -> Self {
        HistogramSpec {
            bin_count,
            range_pa: baseline::DEFAULT_RANGE_PA,
            scale_pa,
        }
    }

    pub fn feature_len(&self) -> usize {
        self.bin_count + baseline::SUMMARY_STATS
    }

    pub(super) fn validate(&self) -> Result<()> {
        if self.bin_count == 0 {
            return Err(Error::InvalidConfig("histogram needs at least one bin".into()));
        }
        if self.range_pa[0].partial_cmp(&self.range_pa[1]) != Some(Ordering::Less) || self.scale_pa.is_nan() || self.scale_pa <= 0.0 {
            return Err(Error::InvalidConfig("histogram range must be increasing and scale positive".into()));
        }
        Ok(())
    }

    pub(super) fn tensor_shapes(&self) -> Vec<(String, Vec<usize>)> {
        vec![
            ("logistic.weight".into(), vec![1, self.feature_len()]),
            ("logistic.bias".into(), vec![1]),
        ]
    }

    /// Zero weights: every input starts at probability 0.5.
    pub(super) fn init<T: Real>(&self) -> Vec<Tensor<T>> {
        self.tensor_shapes()
            .into_iter()
            .map(|(name, shape)| Tensor::zeros(name, shape))
            .collect()
    }
}

pub(super) fn features<T: Real>(spec: &HistogramSpec, x: &[T]) -> Vec<T> {
    let pa: Vec<f64> = x
        .iter()
        .map(|v| v.to_f64().expect("finite") * spec.scale_pa)
        .collect();
    baseline::featurize_f64(&pa, spec.bin_count, spec.range_pa, spec.scale_pa)
        .to_vec()
        .into_iter()
        .map(real)
        .collect()
}

pub(super) fn forward_features<T: Real>(tensors: &[Tensor<T>], feats: &[T]) -> T {
    let w = &tensors[0].data;
    let b = tensors[1].data[0];
    b + w.iter().zip(feats).map(|(&w, &f)| w * f).sum::<T>()
}

pub(super) fn forward<T: Real>(spec: &HistogramSpec, tensors: &[Tensor<T>], x: &[T]) -> T {
    forward_features(tensors, &features(spec, x))
}

pub(super) fn backward<T: Real>(feats: &[T], dlogit: T, grads: &mut [Vec<T>]) {
    for (g, &f) in grads[0].iter_mut().zip(feats) {
        *g += dlogit * f;
    }
    grads[1][0] += dlogit;
}
