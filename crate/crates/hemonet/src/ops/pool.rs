//! Spatial pooling.

use super::OpError;
use crate::tape::{GradTape, Var};
use crate::tensor::{conv_output_size, ConvSpec, Element, ShapeError, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PoolMode {
    Max,
    Average,
}

/// Square-window pooling over `[N, C, H, W]` with no padding.
pub fn pool2d<E: Element>(
    tape: &GradTape<E>,
    x: Var,
    window: usize,
    stride: usize,
    mode: PoolMode,
) -> Result<Var, OpError> {
    enum Saved {
        ArgMax(Vec<usize>),
        Average,
    }

    let (value, saved, in_shape) = {
        let xv = tape.value(x);
        xv.expect_rank(4)?;
        let (n, c, h, w) = (xv.dim(0), xv.dim(1), xv.dim(2), xv.dim(3));
        if window > h || window > w {
            return Err(ShapeError::KernelExceedsInput {
                input: h.min(w),
                kernel: window,
                padding: 0,
            }
            .into());
        }
        let oh = conv_output_size(ConvSpec::new(h, window, stride, 0))?;
        let ow = conv_output_size(ConvSpec::new(w, window, stride, 0))?;
        let mut out = vec![E::zero(); n * c * oh * ow];
        let mut argmax = if mode == PoolMode::Max {
            vec![0usize; out.len()]
        } else {
            Vec::new()
        };
        let inv_area = E::one() / E::from_f64((window * window) as f64);
        let mut o = 0usize;
        for img_chan in 0..n * c {
            let plane = &xv.data()[img_chan * h * w..(img_chan + 1) * h * w];
            for oy in 0..oh {
                for ox in 0..ow {
                    let y0 = oy * stride;
                    let x0 = ox * stride;
                    match mode {
                        PoolMode::Max => {
                            let mut best = E::neg_infinity();
                            let mut best_idx = 0usize;
                            for dy in 0..window {
                                for dx in 0..window {
                                    let idx = (y0 + dy) * w + x0 + dx;
                                    if plane[idx] > best {
                                        best = plane[idx];
                                        best_idx = img_chan * h * w + idx;
                                    }
                                }
                            }
                            out[o] = best;
                            argmax[o] = best_idx;
                        }
                        PoolMode::Average => {
                            let mut acc = E::zero();
                            for dy in 0..window {
                                for dx in 0..window {
                                    acc = acc + plane[(y0 + dy) * w + x0 + dx];
                                }
                            }
                            out[o] = acc * inv_area;
                        }
                    }
                    o += 1;
                }
            }
        }
        let saved = match mode {
            PoolMode::Max => Saved::ArgMax(argmax),
            PoolMode::Average => Saved::Average,
        };
        (Tensor::from_vec(&[n, c, oh, ow], out)?, saved, [n, c, h, w])
    };

    let inv_area = E::one() / E::from_f64((window * window) as f64);
    Ok(tape.push_op(value, &[x], move |g| {
        let mut dx = Tensor::zeros(&in_shape);
        match &saved {
            Saved::ArgMax(argmax) => {
                let data = dx.data_mut();
                for (&src_idx, &gv) in argmax.iter().zip(g.data()) {
                    data[src_idx] = data[src_idx] + gv;
                }
            }
            Saved::Average => {
                let (n, c, h, w) = (in_shape[0], in_shape[1], in_shape[2], in_shape[3]);
                let (oh, ow) = (g.dim(2), g.dim(3));
                let data = dx.data_mut();
                let mut o = 0usize;
                for img_chan in 0..n * c {
                    for oy in 0..oh {
                        for ox in 0..ow {
                            let gv = g.data()[o] * inv_area;
                            for dy in 0..window {
                                for dxx in 0..window {
                                    let idx = img_chan * h * w
                                        + (oy * stride + dy) * w
                                        + ox * stride
                                        + dxx;
                                    data[idx] = data[idx] + gv;
                                }
                            }
                            o += 1;
                        }
                    }
                }
            }
        }
        vec![(x, dx)]
    }))
}

/// Per-channel mean over the spatial plane: `[N, C, H, W] -> [N, C]`.
pub fn global_avg_pool<E: Element>(tape: &GradTape<E>, x: Var) -> Result<Var, OpError> {
    let (value, in_shape) = {
        let xv = tape.value(x);
        xv.expect_rank(4)?;
        let (n, c, h, w) = (xv.dim(0), xv.dim(1), xv.dim(2), xv.dim(3));
        let plane = h * w;
        let inv = E::one() / E::from_f64(plane as f64);
        let mut out = vec![E::zero(); n * c];
        for (slot, chunk) in out.iter_mut().zip(xv.data().chunks(plane)) {
            let mut acc = E::zero();
            for &v in chunk {
                acc = acc + v;
            }
            *slot = acc * inv;
        }
        (Tensor::from_vec(&[n, c], out)?, [n, c, h, w])
    };
    Ok(tape.push_op(value, &[x], move |g| {
        let plane = in_shape[2] * in_shape[3];
        let inv = E::one() / E::from_f64(plane as f64);
        let mut dx = Tensor::zeros(&in_shape);
        for (chunk, &gv) in dx.data_mut().chunks_mut(plane).zip(g.data()) {
            let spread = gv * inv;
            for v in chunk {
                *v = spread;
            }
        }
        vec![(x, dx)]
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ops::sum;

    #[test]
    fn max_and_average_on_two_by_two() {
        let tape = GradTape::<f32>::new();
        let x = tape.constant(Tensor::from_vec(&[1, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap());
        let mx = pool2d(&tape, x, 2, 2, PoolMode::Max).unwrap();
        assert_eq!(tape.value(mx).data(), &[4.0]);
        let avg = pool2d(&tape, x, 2, 2, PoolMode::Average).unwrap();
        assert_eq!(tape.value(avg).data(), &[2.5]);
    }

    #[test]
    fn oversized_window_errors() {
        let tape = GradTape::<f32>::new();
        let x = tape.constant(Tensor::ones(&[1, 1, 2, 2]));
        assert!(pool2d(&tape, x, 3, 1, PoolMode::Max).is_err());
    }

    #[test]
    fn max_pool_routes_gradient_to_argmax() {
        let tape = GradTape::<f64>::new();
        let x = tape.leaf(
            Tensor::from_vec(&[1, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap(),
            true,
        );
        let y = pool2d(&tape, x, 2, 2, PoolMode::Max).unwrap();
        let loss = sum(&tape, y);
        tape.backward(loss).unwrap();
        assert_eq!(tape.grad(x).unwrap().data(), &[0.0, 0.0, 0.0, 1.0]);
    }

    #[test]
    fn global_avg_pool_of_constant_is_constant() {
        let tape = GradTape::<f32>::new();
        let x = tape.constant(Tensor::filled(&[2, 3, 4, 4], 2.5));
        let y = global_avg_pool(&tape, x).unwrap();
        let v = tape.value(y);
        assert_eq!(v.shape(), &[2, 3]);
        assert!(v.data().iter().all(|&e| (e - 2.5).abs() < 1e-6));
    }
}
