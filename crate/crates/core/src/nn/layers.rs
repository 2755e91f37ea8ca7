//! Forward and backward kernels for the layer types used by the window
//! classifiers. Feature maps are channel-major: `x[c * len + t]`.

use super::Real;

/// Output length of a 1D convolution with symmetric zero padding.
pub fn conv1d_out_len(len: usize, kernel: usize, pad: usize) -> usize {
    len + 2 * pad + 1 - kernel
}

/// Range of output positions `t` for which `t + offset` indexes the input.
#[inline]
fn valid_range(out_len: usize, in_len: usize, offset: isize) -> (usize, usize) {
    let lo = if offset < 0 { (-offset) as usize } else { 0 };
    let hi = (in_len as isize - offset).clamp(0, out_len as isize) as usize;
    (lo, hi.max(lo))
}

/// `out[o, t] = bias[o] + sum_{i, j} weight[o, i, j] * input[i, t + j - pad]`
///
/// `weight` is `[out_ch, in_ch, kernel]`, row-major.
#[allow(clippy::too_many_arguments)]
pub fn conv1d_forward<T: Real>(
    input: &[T],
    in_ch: usize,
    len: usize,
    weight: &[T],
    bias: &[T],
    out_ch: usize,
    kernel: usize,
    pad: usize,
    out: &mut [T],
) {
    let out_len = conv1d_out_len(len, kernel, pad);
    debug_assert_eq!(input.len(), in_ch * len);
    debug_assert_eq!(weight.len(), out_ch * in_ch * kernel);
    debug_assert_eq!(out.len(), out_ch * out_len);
    for o in 0..out_ch {
        let dst = &mut out[o * out_len..(o + 1) * out_len];
        dst.iter_mut().for_each(|v| *v = bias[o]);
        for i in 0..in_ch {
            let src = &input[i * len..(i + 1) * len];
            for j in 0..kernel {
                let w = weight[(o * in_ch + i) * kernel + j];
                let offset = j as isize - pad as isize;
                let (lo, hi) = valid_range(out_len, len, offset);
                let s_lo = (lo as isize + offset) as usize;
                let s_hi = (hi as isize + offset) as usize;
                for (d, &s) in dst[lo..hi].iter_mut().zip(&src[s_lo..s_hi]) {
                    *d += w * s;
                }
            }
        }
    }
}

/// Accumulates parameter gradients into `dweight`/`dbias` and, when given,
/// writes the input gradient into `dinput` (overwritten, not accumulated).
#[allow(clippy::too_many_arguments)]
pub fn conv1d_backward<T: Real>(
    input: &[T],
    in_ch: usize,
    len: usize,
    weight: &[T],
    out_ch: usize,
    kernel: usize,
    pad: usize,
    dout: &[T],
    dinput: Option<&mut [T]>,
    dweight: &mut [T],
    dbias: &mut [T],
) {
    let out_len = conv1d_out_len(len, kernel, pad);
    debug_assert_eq!(dout.len(), out_ch * out_len);
    for o in 0..out_ch {
        let g = &dout[o * out_len..(o + 1) * out_len];
        dbias[o] += g.iter().copied().sum::<T>();
        for i in 0..in_ch {
            let src = &input[i * len..(i + 1) * len];
            for j in 0..kernel {
                let offset = j as isize - pad as isize;
                let (lo, hi) = valid_range(out_len, len, offset);
                let s_lo = (lo as isize + offset) as usize;
                let s_hi = (hi as isize + offset) as usize;
                let mut acc = T::zero();
                for (&d, &s) in g[lo..hi].iter().zip(&src[s_lo..s_hi]) {
                    acc += d * s;
                }
                dweight[(o * in_ch + i) * kernel + j] += acc;
            }
        }
    }
    if let Some(dinput) = dinput {
        debug_assert_eq!(dinput.len(), in_ch * len);
        dinput.iter_mut().for_each(|v| *v = T::zero());
        for o in 0..out_ch {
            let g = &dout[o * out_len..(o + 1) * out_len];
            for i in 0..in_ch {
                let dst = &mut dinput[i * len..(i + 1) * len];
                for j in 0..kernel {
                    let w = weight[(o * in_ch + i) * kernel + j];
                    let offset = j as isize - pad as isize;
                    let (lo, hi) = valid_range(out_len, len, offset);
                    let s_lo = (lo as isize + offset) as usize;
                    let s_hi = (hi as isize + offset) as usize;
                    for (d, &gv) in dst[s_lo..s_hi].iter_mut().zip(&g[lo..hi]) {
                        *d += w * gv;
                    }
                }
            }
        }
    }
}

pub fn relu_in_place<T: Real>(x: &mut [T]) {
    x.iter_mut().for_each(|v| {
        if *v < T::zero() {
            *v = T::zero()
        }
    });
}

/// Gradient through ReLU given its output: zero where the unit was inactive.
pub fn relu_backward_in_place<T: Real>(activated: &[T], grad: &mut [T]) {
    for (g, &a) in grad.iter_mut().zip(activated) {
        if a <= T::zero() {
            *g = T::zero();
        }
    }
}

/// Non-overlapping max pooling of width `k`; `len` must be divisible by `k`.
/// Returns the pooled map and the flat input index of each maximum.
pub fn maxpool_forward<T: Real>(input: &[T], ch: usize, len: usize, k: usize) -> (Vec<T>, Vec<usize>) {
    assert_eq!(len % k, 0, "pool width {k} does not divide length {len}");
    let out_len = len / k;
    let mut out = Vec::with_capacity(ch * out_len);
    let mut argmax = Vec::with_capacity(ch * out_len);
    for c in 0..ch {
        for t in 0..out_len {
            let base = c * len + t * k;
            let mut best = base;
            for idx in base + 1..base + k {
                if input[idx] > input[best] {
                    best = idx;
                }
            }
            out.push(input[best]);
            argmax.push(best);
        }
    }
    (out, argmax)
}

/// Routes each pooled gradient back to the position of its maximum.
pub fn maxpool_backward<T: Real>(argmax: &[usize], dout: &[T], dinput: &mut [T]) {
    dinput.iter_mut().for_each(|v| *v = T::zero());
    for (&idx, &g) in argmax.iter().zip(dout) {
        dinput[idx] += g;
    }
}

/// Multiplies each channel by its (inverted-dropout) scale.
pub fn channel_scale_in_place<T: Real>(x: &mut [T], len: usize, scales: &[T]) {
    for (chunk, &s) in x.chunks_exact_mut(len).zip(scales) {
        chunk.iter_mut().for_each(|v| *v *= s);
    }
}

pub fn gap_forward<T: Real>(input: &[T], ch: usize, len: usize) -> Vec<T> {
    let inv = T::one() / T::from_usize(len).expect("length fits");
    (0..ch)
        .map(|c| input[c * len..(c + 1) * len].iter().copied().sum::<T>() * inv)
        .collect()
}

pub fn gap_backward<T: Real>(dpooled: &[T], len: usize) -> Vec<T> {
    let inv = T::one() / T::from_usize(len).expect("length fits");
    dpooled
        .iter()
        .flat_map(|&g| std::iter::repeat_n(g * inv, len))
        .collect()
}

/// `y = W x + b` with `W` shaped `[out, in]`.
pub fn linear_forward<T: Real>(x: &[T], weight: &[T], bias: &[T]) -> Vec<T> {
    let n_in = x.len();
    bias.iter()
        .enumerate()
        .map(|(o, &b)| {
            let row = &weight[o * n_in..(o + 1) * n_in];
            b + row.iter().zip(x).map(|(&w, &v)| w * v).sum::<T>()
        })
        .collect()
}

/// Accumulates `dW += dy x^T`, `db += dy`; returns `dx = W^T dy`.
pub fn linear_backward<T: Real>(x: &[T], weight: &[T], dy: &[T], dweight: &mut [T], dbias: &mut [T]) -> Vec<T> {
    let n_in = x.len();
    let mut dx = vec![T::zero(); n_in];
    for (o, &g) in dy.iter().enumerate() {
        dbias[o] += g;
        let row = &weight[o * n_in..(o + 1) * n_in];
        let drow = &mut dweight[o * n_in..(o + 1) * n_in];
        for k in 0..n_in {
            drow[k] += g * x[k];
            dx[k] += g * row[k];
        }
    }
    dx
}
