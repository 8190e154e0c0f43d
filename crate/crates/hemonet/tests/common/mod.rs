//! Shared naive reference implementations and fixtures.
//!
//! The convolution and pooling references here are direct loop translations
//! of the operation definitions. They deliberately share no code with the
//! library's im2col/GEMM path so they can serve as independent oracles.

#![allow(dead_code)] // not every test target uses every oracle

use hemonet::tensor::{Element, Tensor};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub fn random_tensor<E: Element>(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<E> {
    let len = shape.iter().product();
    let data: Vec<E> = (0..len)
        .map(|_| E::from_f64(rng.random_range(-1.0..1.0)))
        .collect();
    Tensor::from_vec(shape, data).unwrap()
}

/// Quadruple-loop convolution with optional grouping, zero padding handled by
/// bounds checks.
pub fn naive_conv2d(
    x: &Tensor<f32>,
    w: &Tensor<f32>,
    bias: Option<&Tensor<f32>>,
    stride: usize,
    padding: usize,
    groups: usize,
) -> Tensor<f32> {
    let (n, c, h, wid) = (x.dim(0), x.dim(1), x.dim(2), x.dim(3));
    let (f, cg, kh, kw) = (w.dim(0), w.dim(1), w.dim(2), w.dim(3));
    assert_eq!(cg, c / groups);
    let oh = (h + 2 * padding - kh) / stride + 1;
    let ow = (wid + 2 * padding - kw) / stride + 1;
    let fg = f / groups;
    let mut out = Tensor::zeros(&[n, f, oh, ow]);
    for img in 0..n {
        for of in 0..f {
            let g = of / fg;
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = bias.map(|b| b.data()[of]).unwrap_or(0.0);
                    for ci in 0..cg {
                        let c_global = g * cg + ci;
                        for ki in 0..kh {
                            for kj in 0..kw {
                                let iy = (oy * stride + ki) as isize - padding as isize;
                                let ix = (ox * stride + kj) as isize - padding as isize;
                                if iy < 0 || ix < 0 || iy >= h as isize || ix >= wid as isize {
                                    continue;
                                }
                                let xi =
                                    ((img * c + c_global) * h + iy as usize) * wid + ix as usize;
                                let wi = ((of * cg + ci) * kh + ki) * kw + kj;
                                acc += x.data()[xi] * w.data()[wi];
                            }
                        }
                    }
                    let oi = ((img * f + of) * oh + oy) * ow + ox;
                    out.data_mut()[oi] = acc;
                }
            }
        }
    }
    out
}

/// Window-scan pooling reference.
pub fn naive_pool2d(x: &Tensor<f32>, window: usize, stride: usize, max: bool) -> Tensor<f32> {
    let (n, c, h, w) = (x.dim(0), x.dim(1), x.dim(2), x.dim(3));
    let oh = (h - window) / stride + 1;
    let ow = (w - window) / stride + 1;
    let mut out = Tensor::zeros(&[n, c, oh, ow]);
    for plane in 0..n * c {
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best = f32::NEG_INFINITY;
                let mut acc = 0.0f32;
                for dy in 0..window {
                    for dx in 0..window {
                        let v = x.data()[plane * h * w + (oy * stride + dy) * w + ox * stride + dx];
                        best = best.max(v);
                        acc += v;
                    }
                }
                out.data_mut()[plane * oh * ow + oy * ow + ox] = if max {
                    best
                } else {
                    acc / (window * window) as f32
                };
            }
        }
    }
    out
}
