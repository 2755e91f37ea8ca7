//! Hand-written numerics for the window classifiers.
//!
//! Two architectures share one parameter container ([`ModelParams`]), one
//! training path (`loss_and_grads` + [`optim::adamw_step`]) and one weights
//! file format ([`weights`]):
//!
//! * `capturenet-deep`: four 1D conv blocks, global average pooling and a
//!   two-layer head with dropout, see [`CaptureNetSpec::deep`];
//! * `histogram-logistic`: a logistic model over value histograms, see
//!   [`crate::baseline`].
//!
//! Everything is generic over [`Real`] so gradients can be checked in f64
//! while inference and training run in f32.

use std::fmt::Debug;
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, NumAssign};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::{derive_seed, Exec};

mod capturenet;
pub mod layers;
mod logistic;
pub mod loss;
pub mod optim;
pub mod weights;

pub use capturenet::{CaptureNetSpec, ConvSpec, DEEP_POOL_PRODUCT};
pub use logistic::HistogramSpec;
pub use loss::{bce_loss, sigmoid};
pub use optim::{adamw_step, AdamWConfig, OptimizerState};
pub use weights::{load_weights, read_weights, save_weights, write_weights};

pub trait Real: Float + FromPrimitive + NumAssign + Sum + Debug + Default + Send + Sync + 'static {}

impl Real for f32 {}
impl Real for f64 {}

pub(crate) fn real<T: Real>(v: f64) -> T {
    T::from_f64(v).expect("value representable")
}

/// A named, shaped parameter array.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T> {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<T>,
}

impl<T: Real> Tensor<T> {
    pub fn zeros(name: impl Into<String>, shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Tensor {
            name: name.into(),
            shape,
            data: vec![T::zero(); n],
        }
    }
}

/// Architecture descriptor, stored verbatim in the weights-file header.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model")]
pub enum Architecture {
    #[serde(rename = "capturenet-deep")]
    CaptureNetDeep(CaptureNetSpec),
    #[serde(rename = "histogram-logistic")]
    HistogramLogistic(HistogramSpec),
}

impl Architecture {
    pub fn model_id(&self) -> &'static str {
        match self {
            Architecture::CaptureNetDeep(_) => "capturenet-deep",
            Architecture::HistogramLogistic(_) => "histogram-logistic",
        }
    }

    /// Names and shapes of the parameter tensors, in storage order.
    pub fn tensor_shapes(&self) -> Vec<(String, Vec<usize>)> {
        match self {
            Architecture::CaptureNetDeep(spec) => spec.tensor_shapes(),
            Architecture::HistogramLogistic(spec) => spec.tensor_shapes(),
        }
    }

    /// Fixed input length, if the architecture has one.
    pub fn window_size(&self) -> Option<usize> {
        match self {
            Architecture::CaptureNetDeep(spec) => Some(spec.window_size),
            Architecture::HistogramLogistic(_) => None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            Architecture::CaptureNetDeep(spec) => spec.validate(),
            Architecture::HistogramLogistic(spec) => spec.validate(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    /// Dropout is the identity; output is a pure function of the inputs.
    Eval,
    /// Inverted dropout with masks drawn from `seed` (per window index).
    Train { seed: u64 },
}

/// Parameter-shaped gradient buffers, aligned with `ModelParams::tensors`.
pub type Gradients<T> = Vec<Vec<T>>;

#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams<T> {
    pub arch: Architecture,
    /// Seed used for initialization.
    pub seed: u64,
    pub tensors: Vec<Tensor<T>>,
}

/// Builds the capture-net topology for `window_size` with Kaiming-uniform
/// weights and zero biases.
pub fn init_model<T: Real>(window_size: usize, dropout: f64, seed: u64) -> Result<ModelParams<T>> {
    if window_size < 100 {
        return Err(Error::InvalidConfig(format!(
            "window size {window_size} below the minimum of 100"
        )));
    }
    let spec = CaptureNetSpec::deep(window_size, dropout);
    init_with(Architecture::CaptureNetDeep(spec), seed)
}

/// Initializes any architecture from its descriptor.
pub fn init_with<T: Real>(arch: Architecture, seed: u64) -> Result<ModelParams<T>> {
    arch.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let tensors = match &arch {
        Architecture::CaptureNetDeep(spec) => spec.init(&mut rng),
        Architecture::HistogramLogistic(spec) => spec.init(),
    };
    Ok(ModelParams { arch, seed, tensors })
}

impl<T: Real> ModelParams<T> {
    /// Checks tensor names/shapes against the descriptor and that every
    /// value is finite.
    pub fn validate(&self) -> Result<()> {
        self.arch.validate()?;
        let expected = self.arch.tensor_shapes();
        if expected.len() != self.tensors.len() {
            return Err(Error::CorruptWeights(format!(
                "expected {} tensors, found {}",
                expected.len(),
                self.tensors.len()
            )));
        }
        for ((name, shape), t) in expected.iter().zip(&self.tensors) {
            if *name != t.name || *shape != t.shape {
                return Err(Error::CorruptWeights(format!(
                    "shape mismatch: expected {name} {shape:?}, found {} {:?}",
                    t.name, t.shape
                )));
            }
            if t.data.len() != shape.iter().product::<usize>() {
                return Err(Error::CorruptWeights(format!("tensor {name} has wrong element count")));
            }
            if t.data.iter().any(|v| !v.is_finite()) {
                return Err(Error::CorruptWeights(format!("tensor {name} has non-finite values")));
            }
        }
        Ok(())
    }

    pub fn num_parameters(&self) -> usize {
        self.tensors.iter().map(|t| t.data.len()).sum()
    }

    pub fn zero_grads(&self) -> Gradients<T> {
        self.tensors.iter().map(|t| vec![T::zero(); t.data.len()]).collect()
    }

    pub fn cast<U: Real>(&self) -> ModelParams<U> {
        ModelParams {
            arch: self.arch.clone(),
            seed: self.seed,
            tensors: self
                .tensors
                .iter()
                .map(|t| Tensor {
                    name: t.name.clone(),
                    shape: t.shape.clone(),
                    data: t.data.iter().map(|v| U::from(*v).expect("castable")).collect(),
                })
                .collect(),
        }
    }

    fn check_batch(&self, batch: &[&[T]]) -> Result<()> {
        let expected = self.arch.window_size();
        for w in batch {
            if let Some(n) = expected {
                if w.len() != n {
                    return Err(Error::LengthMismatch { left: w.len(), right: n });
                }
            } else if w.is_empty() {
                return Err(Error::EmptyTrace);
            }
            if w.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFiniteInput);
            }
        }
        Ok(())
    }

    fn masks_for(&self, mode: Mode, index: usize) -> Masks<T> {
        match mode {
            Mode::Eval => Masks::none(),
            Mode::Train { seed } => {
                let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[index as u64]));
                match &self.arch {
                    Architecture::CaptureNetDeep(spec) => spec.sample_masks(&mut rng),
                    Architecture::HistogramLogistic(_) => Masks::none(),
                }
            }
        }
    }

    fn sample_logit(&self, x: &[T], masks: &Masks<T>) -> T {
        match &self.arch {
            Architecture::CaptureNetDeep(spec) => capturenet::forward(spec, &self.tensors, x, masks).0,
            Architecture::HistogramLogistic(spec) => logistic::forward(spec, &self.tensors, x),
        }
    }

    /// Pre-sigmoid outputs, one per window.
    pub fn logits(&self, batch: &[&[T]], mode: Mode, exec: Exec) -> Result<Vec<T>> {
        self.check_batch(batch)?;
        let idx: Vec<usize> = (0..batch.len()).collect();
        Ok(exec.map(&idx, |&i| self.sample_logit(batch[i], &self.masks_for(mode, i))))
    }

    /// Capture probabilities in (0, 1), one per window.
    pub fn forward(&self, batch: &[&[T]], mode: Mode, exec: Exec) -> Result<Vec<T>> {
        Ok(self.logits(batch, mode, exec)?.into_iter().map(sigmoid).collect())
    }

    /// Mean BCE of the train-mode forward pass and its gradient with respect
    /// to every parameter. Dropout masks are derived from `seed` exactly as
    /// in `forward(.., Mode::Train { seed }, ..)`.
    ///
    /// Per-window gradients are reduced in fixed-size chunks in index order,
    /// so the result does not depend on the execution strategy.
    pub fn loss_and_grads(&self, batch: &[&[T]], labels: &[T], seed: u64, exec: Exec) -> Result<(T, Gradients<T>)> {
        if batch.len() != labels.len() {
            return Err(Error::LengthMismatch {
                left: batch.len(),
                right: labels.len(),
            });
        }
        self.check_batch(batch)?;
        let n = batch.len();
        if n == 0 {
            return Ok((T::zero(), self.zero_grads()));
        }
        const CHUNK: usize = 8;
        let scale = T::one() / T::from_usize(n).expect("batch size fits");
        let n_chunks = n.div_ceil(CHUNK);
        let mode = Mode::Train { seed };
        let partials = exec.map_range(n_chunks, |c| {
            let mut grads = self.zero_grads();
            let mut loss = T::zero();
            for i in c * CHUNK..n.min((c + 1) * CHUNK) {
                let masks = self.masks_for(mode, i);
                let logit = match &self.arch {
                    Architecture::CaptureNetDeep(spec) => {
                        let (logit, cache) = capturenet::forward(spec, &self.tensors, batch[i], &masks);
                        let p = sigmoid(logit);
                        let dlogit = loss::bce_logit_grad(p, labels[i]) * scale;
                        capturenet::backward(spec, &self.tensors, &cache, &masks, dlogit, &mut grads);
                        logit
                    }
                    Architecture::HistogramLogistic(spec) => {
                        let feats = logistic::features(spec, batch[i]);
                        let logit = logistic::forward_features(&self.tensors, &feats);
                        let dlogit = loss::bce_logit_grad(sigmoid(logit), labels[i]) * scale;
                        logistic::backward(&feats, dlogit, &mut grads);
                        logit
                    }
                };
                loss += bce_loss(&[sigmoid(logit)], &[labels[i]]).expect("equal lengths");
            }
            (loss, grads)
        });
        let mut total = T::zero();
        let mut grads = self.zero_grads();
        for (loss, g) in partials {
            total += loss;
            for (acc, part) in grads.iter_mut().zip(&g) {
                for (a, p) in acc.iter_mut().zip(part) {
                    *a += *p;
                }
            }
        }
        Ok((total * scale, grads))
    }

    /// ReLU on/off states and max-pool argmax positions of one window's
    /// train/eval forward pass. Two inputs with equal patterns lie in the
    /// same linear piece of the network, which is what finite-difference
    /// checks need to know.
    #[doc(hidden)]
    pub fn activation_pattern(&self, x: &[T], mode: Mode, index: usize) -> Vec<usize> {
        match &self.arch {
            Architecture::CaptureNetDeep(spec) => {
                let masks = self.masks_for(mode, index);
                capturenet::forward(spec, &self.tensors, x, &masks).1.pattern()
            }
            Architecture::HistogramLogistic(_) => Vec::new(),
        }
    }
}

/// Dropout scale factors for one window: per channel after selected conv
/// blocks, per unit in the head. `None` means identity.
#[derive(Clone, Debug, PartialEq)]
pub(crate) struct Masks<T> {
    pub conv: Vec<Option<Vec<T>>>,
    pub head: Option<Vec<T>>,
}

impl<T> Masks<T> {
    pub fn none() -> Self {
        Masks { conv: Vec::new(), head: None }
    }

    pub fn conv(&self, layer: usize) -> Option<&[T]> {
        self.conv.get(layer).and_then(|m| m.as_deref())
    }
}

/// Inverted-dropout scales: `1 / (1 - rate)` with probability `1 - rate`,
/// else zero.
pub(crate) fn dropout_scales<T: Real>(rate: f64, n: usize, rng: &mut impl rand::Rng) -> Option<Vec<T>> {
    if rate <= 0.0 {
        return None;
    }
    let keep = 1.0 - rate;
    let scale = real::<T>(1.0 / keep);
    Some(
        (0..n)
            .map(|_| if rng.random_bool(keep) { scale } else { T::zero() })
            .collect(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn random_windows(n: usize, len: usize, seed: u64) -> Vec<Vec<f64>> {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| (0..len).map(|_| rng.random_range(0.0..1.0)).collect()).collect()
    }

    #[test]
    fn deep_topology_shapes() {
        let m = init_model::<f32>(2000, 0.739, 42).unwrap();
        let Architecture::CaptureNetDeep(spec) = &m.arch else { panic!() };
        assert_eq!(spec.final_len(), 25);
        assert_eq!(spec.convs.last().unwrap().out_channels, 64);
        let fc1 = m.tensors.iter().find(|t| t.name == "fc1.weight").unwrap();
        assert_eq!(fc1.shape, vec![32, 64]);
        m.validate().unwrap();

        let no_dropout = init_model::<f32>(2000, 0.0, 7).unwrap();
        let shapes = |m: &ModelParams<f32>| m.tensors.iter().map(|t| t.shape.clone()).collect::<Vec<_>>();
        assert_eq!(shapes(&m), shapes(&no_dropout));

        let small = init_model::<f32>(1600, 0.5, 1).unwrap();
        let Architecture::CaptureNetDeep(spec) = &small.arch else { panic!() };
        assert_eq!(spec.final_len(), 20);
    }

    #[test]
    fn init_rejects_bad_window_sizes() {
        let err = init_model::<f32>(2010, 0.5, 1).unwrap_err();
        match err {
            Error::InvalidWindowSize { below, above, .. } => {
                assert_eq!((below, above), (2000, 2080));
            }
            other => panic!("unexpected {other}"),
        }
        assert!(init_model::<f32>(80, 0.5, 1).is_err());
        assert!(init_model::<f32>(2000, 0.9, 1).is_err());
    }

    #[test]
    fn init_is_deterministic_per_seed() {
        let a = init_model::<f32>(800, 0.3, 5).unwrap();
        let b = init_model::<f32>(800, 0.3, 5).unwrap();
        let c = init_model::<f32>(800, 0.3, 6).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.tensors, c.tensors);
        assert!(a.tensors.iter().filter(|t| t.name.ends_with("bias")).all(|t| t.data.iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn forward_basic_properties() {
        let m = init_model::<f64>(160, 0.5, 3).unwrap();
        let zeros = vec![0.0; 160];
        let p = m.forward(&[&zeros], Mode::Eval, Exec::Sequential).unwrap();
        assert!(p[0] > 0.0 && p[0] < 1.0);

        let ws = random_windows(4, 160, 9);
        let batch: Vec<&[f64]> = ws.iter().map(|w| w.as_slice()).collect();
        let a = m.forward(&batch, Mode::Eval, Exec::Sequential).unwrap();
        let b = m.forward(&batch, Mode::Eval, Exec::Parallel).unwrap();
        assert_eq!(a, b);

        let m0 = init_model::<f64>(160, 0.0, 3).unwrap();
        let eval = m0.forward(&batch, Mode::Eval, Exec::Sequential).unwrap();
        let train = m0.forward(&batch, Mode::Train { seed: 11 }, Exec::Sequential).unwrap();
        assert_eq!(eval, train);

        let mut bad = ws[0].clone();
        bad[3] = f64::NAN;
        assert!(matches!(
            m.forward(&[&bad], Mode::Eval, Exec::Sequential),
            Err(Error::NonFiniteInput)
        ));
        assert!(matches!(
            m.forward(&[&ws[0][..80]], Mode::Eval, Exec::Sequential),
            Err(Error::LengthMismatch { .. })
        ));
    }

    #[test]
    fn train_mode_applies_dropout() {
        let m = init_model::<f64>(160, 0.5, 3).unwrap();
        let ws = random_windows(1, 160, 2);
        let eval = m.logits(&[&ws[0]], Mode::Eval, Exec::Sequential).unwrap();
        let t1 = m.logits(&[&ws[0]], Mode::Train { seed: 1 }, Exec::Sequential).unwrap();
        let t1b = m.logits(&[&ws[0]], Mode::Train { seed: 1 }, Exec::Sequential).unwrap();
        let t2 = m.logits(&[&ws[0]], Mode::Train { seed: 2 }, Exec::Sequential).unwrap();
        assert_eq!(t1, t1b);
        assert!(t1 != eval || t2 != eval);
    }

    #[test]
    fn inverted_dropout_preserves_head_expectation() {
        // The head dropout feeds the linear output layer directly, so the
        // expectation of the logit over masks equals the eval logit.
        let m = init_model::<f64>(160, 0.5, 21).unwrap();
        let Architecture::CaptureNetDeep(spec) = &m.arch else { panic!() };
        let x = random_windows(1, 160, 4).pop().unwrap();
        let eval = capturenet::forward(spec, &m.tensors, &x, &Masks::none()).0;
        let n = 10_000;
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let samples: Vec<f64> = (0..n)
            .map(|_| {
                let masks = Masks {
                    conv: Vec::new(),
                    head: dropout_scales(0.5, spec.hidden, &mut rng),
                };
                capturenet::forward(spec, &m.tensors, &x, &masks).0
            })
            .collect();
        let mean = samples.iter().sum::<f64>() / n as f64;
        let var = samples.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        let sigma = (var / n as f64).sqrt();
        assert!((mean - eval).abs() <= 3.0 * sigma, "mean {mean} eval {eval} sigma {sigma}");
    }

    #[test]
    fn duplicate_windows_contribute_equally() {
        let m = init_model::<f64>(160, 0.0, 8).unwrap();
        let w = random_windows(1, 160, 5).pop().unwrap();
        let (_, single) = m.loss_and_grads(&[&w], &[1.0], 0, Exec::Sequential).unwrap();
        let (_, double) = m.loss_and_grads(&[&w, &w], &[1.0, 1.0], 0, Exec::Sequential).unwrap();
        for (a, b) in single.iter().flatten().zip(double.iter().flatten()) {
            assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0));
        }
    }

    #[test]
    fn final_bias_gradient_is_p_minus_y() {
        let m = init_model::<f64>(160, 0.0, 8).unwrap();
        let ws = random_windows(3, 160, 6);
        let batch: Vec<&[f64]> = ws.iter().map(|w| w.as_slice()).collect();
        let p = m.forward(&batch, Mode::Eval, Exec::Sequential).unwrap();
        // Labels equal to the model output: dBCE/dlogit = p - y = 0.
        let (_, g) = m.loss_and_grads(&batch, &p, 0, Exec::Sequential).unwrap();
        let fc2_bias = m.tensors.iter().position(|t| t.name == "fc2.bias").unwrap();
        assert!(g[fc2_bias][0].abs() < 1e-15);
        let labels = [1.0, 0.0, 1.0];
        let (_, g) = m.loss_and_grads(&batch, &labels, 0, Exec::Sequential).unwrap();
        let expected: f64 = p.iter().zip(labels).map(|(p, y)| p - y).sum::<f64>() / 3.0;
        assert!((g[fc2_bias][0] - expected).abs() < 1e-12);
    }

    #[test]
    fn gradients_do_not_depend_on_execution_strategy() {
        let m = init_model::<f32>(160, 0.6, 8).unwrap();
        let ws: Vec<Vec<f32>> = random_windows(37, 160, 6)
            .into_iter()
            .map(|w| w.into_iter().map(|v| v as f32).collect())
            .collect();
        let batch: Vec<&[f32]> = ws.iter().map(|w| w.as_slice()).collect();
        let labels: Vec<f32> = (0..37).map(|i| (i % 2) as f32).collect();
        let a = m.loss_and_grads(&batch, &labels, 4, Exec::Sequential).unwrap();
        let b = m.loss_and_grads(&batch, &labels, 4, Exec::Parallel).unwrap();
        assert_eq!(a, b);
    }
}
