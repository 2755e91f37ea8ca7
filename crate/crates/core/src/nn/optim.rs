use serde::{Deserialize, Serialize};

use super::{real, Gradients, ModelParams, Real};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamWConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        AdamWConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
        }
    }
}

impl AdamWConfig {
    pub fn new(lr: f64, weight_decay: f64) -> Self {
        AdamWConfig {
            lr,
            weight_decay,
            ..Default::default()
        }
    }
}

/// First/second moment estimates mirroring the parameter tensors.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState<T> {
    pub config: AdamWConfig,
    pub m: Vec<Vec<T>>,
    pub v: Vec<Vec<T>>,
    pub step: u64,
}

impl<T: Real> OptimizerState<T> {
    pub fn new(params: &ModelParams<T>, config: AdamWConfig) -> Self {
        OptimizerState {
            config,
            m: params.zero_grads(),
            v: params.zero_grads(),
            step: 0,
        }
    }
}

/// One AdamW update. Weight decay is decoupled: parameters are first
/// shrunk by `lr * weight_decay`, then moved by the bias-corrected Adam
/// step.
pub fn adamw_step<T: Real>(params: &mut ModelParams<T>, grads: &Gradients<T>, state: &mut OptimizerState<T>) -> Result<()> {
    if grads.len() != params.tensors.len() || state.m.len() != params.tensors.len() {
        return Err(Error::LengthMismatch {
            left: grads.len(),
            right: params.tensors.len(),
        });
    }
    for (t, g) in params.tensors.iter().zip(grads) {
        if g.len() != t.data.len() {
            return Err(Error::LengthMismatch {
                left: g.len(),
                right: t.data.len(),
            });
        }
        if g.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteGradient { tensor: t.name.clone() });
        }
    }

    state.step += 1;
    let c = state.config;
    let t = state.step as i32;
    let bias1 = 1.0 - c.beta1.powi(t);
    let bias2 = 1.0 - c.beta2.powi(t);
    let decay: T = real(1.0 - c.lr * c.weight_decay);
    let (b1, b2): (T, T) = (real(c.beta1), real(c.beta2));
    let (one_b1, one_b2): (T, T) = (real(1.0 - c.beta1), real(1.0 - c.beta2));
    let step_size: T = real(c.lr / bias1);
    let inv_sqrt_bias2: T = real(1.0 / bias2.sqrt());
    let eps: T = real(c.eps);

    for (k, tensor) in params.tensors.iter_mut().enumerate() {
        let (m, v) = (&mut state.m[k], &mut state.v[k]);
        for (i, p) in tensor.data.iter_mut().enumerate() {
            let g = grads[k][i];
            *p *= decay;
            m[i] = b1 * m[i] + one_b1 * g;
            v[i] = b2 * v[i] + one_b2 * g * g;
            let denom = v[i].sqrt() * inv_sqrt_bias2 + eps;
            *p -= step_size * m[i] / denom;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::init_model;

    fn model() -> ModelParams<f64> {
        let mut m = init_model::<f64>(160, 0.0, 1).unwrap();
        // Make biases non-zero so decay is visible everywhere.
        for t in &mut m.tensors {
            t.data.iter_mut().enumerate().for_each(|(i, v)| *v += 0.01 * (i % 7) as f64 + 0.1);
        }
        m
    }

    fn filled(m: &ModelParams<f64>, value: f64) -> Gradients<f64> {
        m.tensors.iter().map(|t| vec![value; t.data.len()]).collect()
    }

    #[test]
    fn first_step_moves_by_lr() {
        let mut m = model();
        let before = m.clone();
        let mut st = OptimizerState::new(&m, AdamWConfig::new(1e-3, 0.0));
        let g = filled(&m, 1.0);
        adamw_step(&mut m, &g, &mut st).unwrap();
        // m_hat = 1, v_hat = 1 -> delta = -lr / (1 + eps)
        for (a, b) in m.tensors.iter().flat_map(|t| &t.data).zip(before.tensors.iter().flat_map(|t| &t.data)) {
            assert!((a - b + 1e-3).abs() < 1e-10, "{a} {b}");
        }
        assert_eq!(st.step, 1);
    }

    #[test]
    fn zero_gradient_without_decay_is_identity() {
        let mut m = model();
        let before = m.clone();
        let mut st = OptimizerState::new(&m, AdamWConfig::new(1e-3, 0.0));
        let g = filled(&m, 0.0);
        adamw_step(&mut m, &g, &mut st).unwrap();
        assert_eq!(m, before);
    }

    #[test]
    fn decoupled_decay_scales_parameters() {
        let mut m = model();
        let before = m.clone();
        let mut st = OptimizerState::new(&m, AdamWConfig::new(0.01, 0.1));
        let g = filled(&m, 0.0);
        adamw_step(&mut m, &g, &mut st).unwrap();
        for (a, b) in m.tensors.iter().flat_map(|t| &t.data).zip(before.tensors.iter().flat_map(|t| &t.data)) {
            assert!((a - b * (1.0 - 0.001)).abs() < 1e-15);
        }
    }

    #[test]
    fn zero_learning_rate() {
        let mut m = model();
        let before = m.clone();
        let mut st = OptimizerState::new(&m, AdamWConfig::new(0.0, 0.0));
        let g = filled(&m, 0.7);
        adamw_step(&mut m, &g, &mut st).unwrap();
        assert_eq!(m, before);

        // lr = 0 means the decoupled decay term lr*wd vanishes too.
        let mut st = OptimizerState::new(&m, AdamWConfig::new(0.0, 0.5));
        let g = filled(&m, -0.3);
        adamw_step(&mut m, &g, &mut st).unwrap();
        assert_eq!(m, before);
    }

    #[test]
    fn rejects_non_finite_gradients() {
        let mut m = model();
        let mut g = filled(&m, 0.0);
        g[2][0] = f64::INFINITY;
        let mut st = OptimizerState::new(&m, AdamWConfig::default());
        assert!(matches!(adamw_step(&mut m, &g, &mut st), Err(Error::NonFiniteGradient { .. })));
        assert_eq!(st.step, 0);
    }

    #[test]
    fn matches_scalar_recurrence_over_several_steps() {
        // Hand-rolled recurrence for a single scalar parameter.
        let cfg = AdamWConfig { lr: 0.05, weight_decay: 0.01, ..Default::default() };
        let grads = [0.3, -1.2, 0.8, 0.05];
        let (mut p, mut m1, mut v1) = (0.7f64, 0.0, 0.0);
        for (t, &g) in grads.iter().enumerate() {
            let t = t as i32 + 1;
            p -= cfg.lr * cfg.weight_decay * p;
            m1 = cfg.beta1 * m1 + (1.0 - cfg.beta1) * g;
            v1 = cfg.beta2 * v1 + (1.0 - cfg.beta2) * g * g;
            let mh = m1 / (1.0 - cfg.beta1.powi(t));
            let vh = v1 / (1.0 - cfg.beta2.powi(t));
            p -= cfg.lr * mh / (vh.sqrt() + cfg.eps);
        }

        let mut m = init_model::<f64>(160, 0.0, 1).unwrap();
        let k = m.tensors.len() - 1; // fc2.bias, a single scalar
        m.tensors[k].data[0] = 0.7;
        let mut st = OptimizerState::new(&m, cfg);
        for &g in &grads {
            let mut gr = m.zero_grads();
            gr[k][0] = g;
            adamw_step(&mut m, &gr, &mut st).unwrap();
        }
        assert!((m.tensors[k].data[0] - p).abs() < 1e-12);
    }
}
