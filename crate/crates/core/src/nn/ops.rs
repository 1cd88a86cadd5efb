//! Layer primitives with hand-written backward passes.

use std::ops::Range;

use crate::scalar::Scalar;
use crate::sparse_conv::{ConvGeometry, FeatureMap};
use crate::sparse_format::DenseKernel;

/// Output positions `o` along one axis whose input index `o·stride + tap − pad` lands in
/// `[0, input)`.
fn valid_outputs(output: usize, input: usize, tap: usize, geom: ConvGeometry) -> Range<usize> {
    let lo = geom.pad.saturating_sub(tap).div_ceil(geom.stride);
    let hi = if input + geom.pad > tap { (input + geom.pad - tap).div_ceil(geom.stride).min(output) } else { 0 };
    lo..hi.max(lo)
}

/// Dense convolution in weight-stationary order. Shapes are assumed validated.
pub fn conv_forward<T: Scalar>(
    input: &FeatureMap<T>,
    kernel: &DenseKernel<T>,
    bias: &[T],
    geom: ConvGeometry,
) -> FeatureMap<T> {
    let shape = kernel.shape();
    let (ih, iw) = (input.height(), input.width());
    let (oh, ow) = geom.output_dims(ih, iw, shape.kernel_h, shape.kernel_w).expect("validated geometry");
    let mut out = FeatureMap::zeros(shape.out_channels, oh, ow);
    let src = input.values();
    let dst = out.values_mut();
    for n in 0..shape.out_channels {
        let plane = &mut dst[n * oh * ow..(n + 1) * oh * ow];
        plane.fill(bias[n]);
        for c in 0..shape.in_channels {
            for r in 0..shape.kernel_h {
                let ys = valid_outputs(oh, ih, r, geom);
                for s in 0..shape.kernel_w {
                    let w = kernel.get(n, c, r, s);
                    let xs = valid_outputs(ow, iw, s, geom);
                    for y in ys.clone() {
                        let iy = y * geom.stride + r - geom.pad;
                        let row = &src[(c * ih + iy) * iw..(c * ih + iy + 1) * iw];
                        let out_row = &mut plane[y * ow..(y + 1) * ow];
                        for x in xs.clone() {
                            out_row[x] += w * row[x * geom.stride + s - geom.pad];
                        }
                    }
                }
            }
        }
    }
    out
}

/// Gradients of [`conv_forward`] with respect to the kernel, bias and input.
pub fn conv_backward<T: Scalar>(
    input: &FeatureMap<T>,
    kernel: &DenseKernel<T>,
    geom: ConvGeometry,
    grad_out: &FeatureMap<T>,
) -> (DenseKernel<T>, Vec<T>, FeatureMap<T>) {
    let shape = kernel.shape();
    let (ih, iw) = (input.height(), input.width());
    let (oh, ow) = (grad_out.height(), grad_out.width());
    let mut grad_kernel = DenseKernel::zeros(shape);
    let mut grad_input = FeatureMap::zeros(input.channels(), ih, iw);
    let src = input.values();
    let gout = grad_out.values();
    let gin = grad_input.values_mut();
    let gk = grad_kernel.values_mut();
    let columns = shape.columns();
    let grad_bias =
        (0..shape.out_channels).map(|n| gout[n * oh * ow..(n + 1) * oh * ow].iter().copied().sum()).collect();
    for n in 0..shape.out_channels {
        let plane = &gout[n * oh * ow..(n + 1) * oh * ow];
        for c in 0..shape.in_channels {
            for r in 0..shape.kernel_h {
                let ys = valid_outputs(oh, ih, r, geom);
                for s in 0..shape.kernel_w {
                    let w = kernel.get(n, c, r, s);
                    let xs = valid_outputs(ow, iw, s, geom);
                    let mut acc = T::zero();
                    for y in ys.clone() {
                        let iy = y * geom.stride + r - geom.pad;
                        let base = (c * ih + iy) * iw;
                        for x in xs.clone() {
                            let ix = base + x * geom.stride + s - geom.pad;
                            let g = plane[y * ow + x];
                            acc += g * src[ix];
                            gin[ix] += w * g;
                        }
                    }
                    gk[n * columns + shape.flatten(c, r, s)] = acc;
                }
            }
        }
    }
    (grad_kernel, grad_bias, grad_input)
}

pub fn relu_forward<T: Scalar>(input: &FeatureMap<T>) -> FeatureMap<T> {
    input.map(|v| v.max(T::zero()))
}

/// Passes gradient where the pre-activation was strictly positive.
pub fn relu_backward<T: Scalar>(pre: &FeatureMap<T>, grad_out: &FeatureMap<T>) -> FeatureMap<T> {
    let mut grad = grad_out.clone();
    for (g, &x) in grad.values_mut().iter_mut().zip(pre.values()) {
        if x <= T::zero() {
            *g = T::zero();
        }
    }
    grad
}

/// 2×2 max pooling with stride 2; odd trailing rows/columns are dropped. Returns the
/// pooled map and, per output, the flat input index that won (first maximum on ties).
pub fn maxpool_forward<T: Scalar>(input: &FeatureMap<T>) -> (FeatureMap<T>, Vec<usize>) {
    let (c, h, w) = (input.channels(), input.height(), input.width());
    let (oh, ow) = (h / 2, w / 2);
    let mut out = FeatureMap::zeros(c, oh, ow);
    let mut argmax = Vec::with_capacity(c * oh * ow);
    let src = input.values();
    let dst = out.values_mut();
    for ch in 0..c {
        for y in 0..oh {
            for x in 0..ow {
                let mut best = (ch * h + 2 * y) * w + 2 * x;
                for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                    let i = (ch * h + 2 * y + dy) * w + 2 * x + dx;
                    if src[i] > src[best] {
                        best = i;
                    }
                }
                dst[(ch * oh + y) * ow + x] = src[best];
                argmax.push(best);
            }
        }
    }
    (out, argmax)
}

pub fn maxpool_backward<T: Scalar>(input: &FeatureMap<T>, argmax: &[usize], grad_out: &FeatureMap<T>) -> FeatureMap<T> {
    let mut grad = FeatureMap::zeros(input.channels(), input.height(), input.width());
    let g = grad.values_mut();
    for (&i, &v) in argmax.iter().zip(grad_out.values()) {
        g[i] += v;
    }
    grad
}

/// Cross-entropy of softmax(logits) against `label`, and its gradient with respect to
/// the logits.
pub fn softmax_cross_entropy<T: Scalar>(logits: &[T], label: usize) -> (T, Vec<T>) {
    let max = logits.iter().copied().fold(T::neg_infinity(), T::max);
    let exps: Vec<T> = logits.iter().map(|&z| (z - max).exp()).collect();
    let sum: T = exps.iter().copied().sum();
    let loss = sum.ln() + max - logits[label];
    let mut grad: Vec<T> = exps.into_iter().map(|e| e / sum).collect();
    grad[label] -= T::one();
    (loss, grad)
}
