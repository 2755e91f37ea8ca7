use rand::Rng;
use serde::{Deserialize, Serialize};

use super::layers::{
    channel_scale_in_place, conv1d_backward, conv1d_forward, gap_backward, gap_forward, linear_backward,
    linear_forward, maxpool_backward, maxpool_forward, relu_backward_in_place, relu_in_place,
};
use super::{dropout_scales, real, Masks, Real, Tensor};
use crate::error::{Error, Result};

/// Product of the pool widths of the deep topology; window sizes must be a
/// multiple of it.
pub const DEEP_POOL_PRODUCT: usize = 80;

/// Highest dropout rate accepted for the head.
pub const MAX_DROPOUT: f64 = 0.8;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub padding: usize,
    /// Max-pool width after the ReLU; 1 means no pooling.
    pub pool: usize,
    /// Channel dropout after the (pooled) block output.
    pub dropout_after: bool,
}

/// Conv blocks (conv, ReLU, optional max-pool, optional channel dropout),
/// then GAP, `FC(hidden) + ReLU + dropout`, `FC(1)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CaptureNetSpec {
    pub window_size: usize,
    /// Head dropout rate.
    pub dropout: f64,
    /// Channel-dropout rate of the conv blocks flagged `dropout_after`.
    pub conv_dropout: f64,
    pub convs: Vec<ConvSpec>,
    pub hidden: usize,
}

impl CaptureNetSpec {
    /// The fixed deep topology:
    ///
    /// ```text
    /// conv(1->16, k7) relu pool4
    /// conv(16->32, k5) relu pool4 chdrop(p/2)
    /// conv(32->64, k3) relu pool5 chdrop(p/2)
    /// conv(64->64, k3) relu
    /// gap -> fc(64->32) relu drop(p) -> fc(32->1)
    /// ```
    pub fn deep(window_size: usize, dropout: f64) -> Self {
        let conv = |i, o, k, pool, dropout_after| ConvSpec {
            in_channels: i,
            out_channels: o,
            kernel: k,
            padding: k / 2,
            pool,
            dropout_after,
        };
        CaptureNetSpec {
            window_size,
            dropout,
            conv_dropout: dropout / 2.0,
            convs: vec![
                conv(1, 16, 7, 4, false),
                conv(16, 32, 5, 4, true),
                conv(32, 64, 3, 5, true),
                conv(64, 64, 3, 1, false),
            ],
            hidden: 32,
        }
    }

    pub fn pool_product(&self) -> usize {
        self.convs.iter().map(|c| c.pool).product()
    }

    /// Time steps entering global average pooling.
    pub fn final_len(&self) -> usize {
        self.window_size / self.pool_product()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.convs.is_empty() || self.hidden == 0 {
            return bad("network needs at least one conv block and a hidden layer".into());
        }
        if !(0.0..=MAX_DROPOUT).contains(&self.dropout) || !(0.0..=MAX_DROPOUT).contains(&self.conv_dropout) {
            return bad(format!("dropout {} outside [0, {MAX_DROPOUT}]", self.dropout));
        }
        let mut channels = 1;
        for (i, c) in self.convs.iter().enumerate() {
            if c.in_channels != channels {
                return bad(format!("conv{} expects {} input channels, previous block has {channels}", i + 1, c.in_channels));
            }
            if c.kernel == 0 || c.kernel != 2 * c.padding + 1 || c.pool == 0 {
                return bad(format!("conv{} must use an odd kernel with same padding", i + 1));
            }
            channels = c.out_channels;
        }
        let p = self.pool_product();
        if self.window_size == 0 || !self.window_size.is_multiple_of(p) {
            let below = (self.window_size / p) * p;
            return Err(Error::InvalidWindowSize {
                size: self.window_size,
                multiple: p,
                below: below.max(p),
                above: below + p,
            });
        }
        Ok(())
    }

    fn last_channels(&self) -> usize {
        self.convs.last().map(|c| c.out_channels).unwrap_or(1)
    }

    pub(super) fn tensor_shapes(&self) -> Vec<(String, Vec<usize>)> {
        let mut shapes = Vec::new();
        for (i, c) in self.convs.iter().enumerate() {
            shapes.push((format!("conv{}.weight", i + 1), vec![c.out_channels, c.in_channels, c.kernel]));
            shapes.push((format!("conv{}.bias", i + 1), vec![c.out_channels]));
        }
        shapes.push(("fc1.weight".into(), vec![self.hidden, self.last_channels()]));
        shapes.push(("fc1.bias".into(), vec![self.hidden]));
        shapes.push(("fc2.weight".into(), vec![1, self.hidden]));
        shapes.push(("fc2.bias".into(), vec![1]));
        shapes
    }

    pub(super) fn init<T: Real>(&self, rng: &mut impl Rng) -> Vec<Tensor<T>> {
        let shapes = self.tensor_shapes();
        let n_weighted = shapes.len() / 2;
        shapes
            .into_iter()
            .enumerate()
            .map(|(i, (name, shape))| {
                let mut t = Tensor::zeros(name, shape);
                if i % 2 == 0 {
                    let fan_in: usize = t.shape[1..].iter().product();
                    // Layers feeding a ReLU get the He bound; the output layer the plain one.
                    let gain = if i / 2 + 1 == n_weighted { 1.0 } else { 6.0 };
                    let bound = (gain / fan_in as f64).sqrt();
                    t.data.iter_mut().for_each(|v| *v = real(rng.random_range(-bound..bound)));
                }
                t
            })
            .collect()
    }

    pub(super) fn sample_masks<T: Real>(&self, rng: &mut impl Rng) -> Masks<T> {
        let conv = self
            .convs
            .iter()
            .map(|c| {
                if c.dropout_after {
                    dropout_scales(self.conv_dropout, c.out_channels, rng)
                } else {
                    None
                }
            })
            .collect();
        let head = dropout_scales(self.dropout, self.hidden, rng);
        Masks { conv, head }
    }
}

pub(super) struct BlockCache<T> {
    input: Vec<T>,
    in_len: usize,
    /// Post-ReLU conv output, before pooling.
    activated: Vec<T>,
    argmax: Option<Vec<usize>>,
}

pub(super) struct Cache<T> {
    blocks: Vec<BlockCache<T>>,
    final_len: usize,
    gap: Vec<T>,
    hidden_act: Vec<T>,
    hidden_out: Vec<T>,
}

impl<T: Real> Cache<T> {
    pub fn pattern(&self) -> Vec<usize> {
        let mut out = Vec::new();
        for b in &self.blocks {
            out.extend(b.activated.iter().map(|&v| (v > T::zero()) as usize));
            if let Some(a) = &b.argmax {
                out.extend_from_slice(a);
            }
        }
        out.extend(self.hidden_act.iter().map(|&v| (v > T::zero()) as usize));
        out
    }
}

pub(super) fn forward<T: Real>(spec: &CaptureNetSpec, tensors: &[Tensor<T>], x: &[T], masks: &Masks<T>) -> (T, Cache<T>) {
    let mut blocks = Vec::with_capacity(spec.convs.len());
    let mut cur = x.to_vec();
    let mut len = x.len();
    for (l, c) in spec.convs.iter().enumerate() {
        let (w, b) = (&tensors[2 * l].data, &tensors[2 * l + 1].data);
        let mut act = vec![T::zero(); c.out_channels * len];
        conv1d_forward(&cur, c.in_channels, len, w, b, c.out_channels, c.kernel, c.padding, &mut act);
        relu_in_place(&mut act);
        let (mut out, argmax, out_len) = if c.pool > 1 {
            let (o, a) = maxpool_forward(&act, c.out_channels, len, c.pool);
            (o, Some(a), len / c.pool)
        } else {
            (act.clone(), None, len)
        };
        if let Some(scales) = masks.conv(l) {
            channel_scale_in_place(&mut out, out_len, scales);
        }
        blocks.push(BlockCache {
            input: std::mem::replace(&mut cur, out),
            in_len: len,
            activated: act,
            argmax,
        });
        len = out_len;
    }
    let n = spec.convs.len();
    let gap = gap_forward(&cur, spec.last_channels(), len);
    let mut hidden_act = linear_forward(&gap, &tensors[2 * n].data, &tensors[2 * n + 1].data);
    relu_in_place(&mut hidden_act);
    let hidden_out = match &masks.head {
        Some(scales) => hidden_act.iter().zip(scales).map(|(&h, &s)| h * s).collect(),
        None => hidden_act.clone(),
    };
    let logit = linear_forward(&hidden_out, &tensors[2 * n + 2].data, &tensors[2 * n + 3].data)[0];
    let cache = Cache {
        blocks,
        final_len: len,
        gap,
        hidden_act,
        hidden_out,
    };
    (logit, cache)
}

/// Accumulates `dlogit * d(logit)/d(param)` into `grads`.
pub(super) fn backward<T: Real>(
    spec: &CaptureNetSpec,
    tensors: &[Tensor<T>],
    cache: &Cache<T>,
    masks: &Masks<T>,
    dlogit: T,
    grads: &mut [Vec<T>],
) {
    let n = spec.convs.len();
    let (_, head) = grads.split_at_mut(2 * n);
    let (fc1, fc2) = head.split_at_mut(2);

    let (fc2w, fc2b) = fc2.split_at_mut(1);
    let mut dhidden = linear_backward(&cache.hidden_out, &tensors[2 * n + 2].data, &[dlogit], &mut fc2w[0], &mut fc2b[0]);
    if let Some(scales) = &masks.head {
        dhidden.iter_mut().zip(scales).for_each(|(d, &s)| *d *= s);
    }
    relu_backward_in_place(&cache.hidden_act, &mut dhidden);
    let (fc1w, fc1b) = fc1.split_at_mut(1);
    let dgap = linear_backward(&cache.gap, &tensors[2 * n].data, &dhidden, &mut fc1w[0], &mut fc1b[0]);

    let mut dout = gap_backward(&dgap, cache.final_len);
    for l in (0..n).rev() {
        let c = &spec.convs[l];
        let block = &cache.blocks[l];
        let out_len = block.in_len / c.pool;
        if let Some(scales) = masks.conv(l) {
            channel_scale_in_place(&mut dout, out_len, scales);
        }
        let mut dact = match &block.argmax {
            Some(argmax) => {
                let mut d = vec![T::zero(); c.out_channels * block.in_len];
                maxpool_backward(argmax, &dout, &mut d);
                d
            }
            None => dout,
        };
        relu_backward_in_place(&block.activated, &mut dact);
        let (gw, gb) = grads.split_at_mut(2 * l + 1);
        let mut dinput = if l > 0 {
            Some(vec![T::zero(); c.in_channels * block.in_len])
        } else {
            None
        };
        conv1d_backward(
            &block.input,
            c.in_channels,
            block.in_len,
            &tensors[2 * l].data,
            c.out_channels,
            c.kernel,
            c.padding,
            &dact,
            dinput.as_deref_mut(),
            &mut gw[2 * l],
            &mut gb[0],
        );
        dout = dinput.unwrap_or_default();
    }
}
