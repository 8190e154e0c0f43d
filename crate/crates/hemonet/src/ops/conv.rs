//! 2-d convolution, standard and grouped.
//!
//! The forward pass lowers each window gather to a matrix multiply
//! (im2col followed by a GEMM); the backward pass reuses the gathered
//! columns for the kernel gradient and scatters the input gradient back
//! through col2im. A naive quadruple-loop reference lives in the test
//! suite as the independent oracle for this lowering.

use super::OpError;
use crate::tape::{GradTape, Var};
use crate::tensor::{
    conv_output_size, matmul_nn, matmul_nt, matmul_tn, ConvSpec, Element, ShapeError, Tensor,
};

#[derive(Clone, Copy)]
struct ConvDims {
    batch: usize,
    in_channels: usize,
    h: usize,
    w: usize,
    out_channels: usize,
    kh: usize,
    kw: usize,
    oh: usize,
    ow: usize,
    stride: usize,
    padding: usize,
    groups: usize,
}

impl ConvDims {
    fn group_in(&self) -> usize {
        self.in_channels / self.groups
    }
    fn group_out(&self) -> usize {
        self.out_channels / self.groups
    }
    /// Rows of the column matrix: channels-per-group times kernel area.
    fn ckk(&self) -> usize {
        self.group_in() * self.kh * self.kw
    }
    fn out_plane(&self) -> usize {
        self.oh * self.ow
    }
}

/// Gathers the windows of one `[c, h, w]` channel block into a
/// `[c*kh*kw, oh*ow]` column matrix, zero-filling out-of-range taps.
/// Stride-1 rows reduce to slice copies of the in-range span.
fn im2col<E: Element>(block: &[E], dims: &ConvDims, cols: &mut [E]) {
    let (h, w) = (dims.h, dims.w);
    let (oh, ow) = (dims.oh, dims.ow);
    let pad = dims.padding as isize;
    let stride = dims.stride as isize;
    let mut row = 0usize;
    for c in 0..dims.group_in() {
        let plane = &block[c * h * w..(c + 1) * h * w];
        for ki in 0..dims.kh {
            for kj in 0..dims.kw {
                let dst = &mut cols[row * oh * ow..(row + 1) * oh * ow];
                // Horizontal span of in-range destination columns at stride 1.
                let lo = (pad - kj as isize).max(0) as usize;
                let hi = ((w as isize + pad - kj as isize).max(0) as usize).min(ow);
                for oy in 0..oh {
                    let iy = oy as isize * stride + ki as isize - pad;
                    let dst_row = &mut dst[oy * ow..(oy + 1) * ow];
                    if iy < 0 || iy >= h as isize {
                        for v in dst_row.iter_mut() {
                            *v = E::zero();
                        }
                        continue;
                    }
                    let src_row = &plane[iy as usize * w..(iy as usize + 1) * w];
                    if stride == 1 {
                        for v in &mut dst_row[..lo] {
                            *v = E::zero();
                        }
                        let src_lo = (lo as isize + kj as isize - pad) as usize;
                        dst_row[lo..hi].copy_from_slice(&src_row[src_lo..src_lo + (hi - lo)]);
                        for v in &mut dst_row[hi..] {
                            *v = E::zero();
                        }
                    } else {
                        for (ox, v) in dst_row.iter_mut().enumerate() {
                            let ix = ox as isize * stride + kj as isize - pad;
                            *v = if ix >= 0 && ix < w as isize {
                                src_row[ix as usize]
                            } else {
                                E::zero()
                            };
                        }
                    }
                }
                row += 1;
            }
        }
    }
}

/// Scatter-adds a column-matrix gradient back onto the input block.
fn col2im<E: Element>(cols: &[E], dims: &ConvDims, block: &mut [E]) {
    let (h, w) = (dims.h, dims.w);
    let (oh, ow) = (dims.oh, dims.ow);
    let pad = dims.padding as isize;
    let stride = dims.stride as isize;
    let mut row = 0usize;
    for c in 0..dims.group_in() {
        let plane = &mut block[c * h * w..(c + 1) * h * w];
        for ki in 0..dims.kh {
            for kj in 0..dims.kw {
                let src = &cols[row * oh * ow..(row + 1) * oh * ow];
                for oy in 0..oh {
                    let iy = oy as isize * stride + ki as isize - pad;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let plane_row = &mut plane[iy as usize * w..(iy as usize + 1) * w];
                    let src_row = &src[oy * ow..(oy + 1) * ow];
                    for (ox, &v) in src_row.iter().enumerate() {
                        let ix = ox as isize * stride + kj as isize - pad;
                        if ix >= 0 && ix < w as isize {
                            plane_row[ix as usize] = plane_row[ix as usize] + v;
                        }
                    }
                }
                row += 1;
            }
        }
    }
}

fn validate(
    x: &Tensor<impl Element>,
    kernel: &Tensor<impl Element>,
    bias: Option<&Tensor<impl Element>>,
    stride: usize,
    padding: usize,
    groups: usize,
) -> Result<ConvDims, OpError> {
    x.expect_rank(4)?;
    kernel.expect_rank(4)?;
    let (batch, in_channels, h, w) = (x.dim(0), x.dim(1), x.dim(2), x.dim(3));
    let (out_channels, kc, kh, kw) = (kernel.dim(0), kernel.dim(1), kernel.dim(2), kernel.dim(3));
    if groups == 0 {
        return Err(ShapeError::ZeroExtent { field: "groups" }.into());
    }
    if in_channels % groups != 0 {
        return Err(ShapeError::DimensionMismatch {
            what: "input channels not divisible by groups",
            expected: groups,
            actual: in_channels,
        }
        .into());
    }
    if out_channels % groups != 0 {
        return Err(ShapeError::DimensionMismatch {
            what: "output channels not divisible by groups",
            expected: groups,
            actual: out_channels,
        }
        .into());
    }
    if kc != in_channels / groups {
        return Err(ShapeError::DimensionMismatch {
            what: "kernel input channels",
            expected: in_channels / groups,
            actual: kc,
        }
        .into());
    }
    if let Some(b) = bias {
        if b.shape() != [out_channels] {
            return Err(ShapeError::DimensionMismatch {
                what: "bias length",
                expected: out_channels,
                actual: b.len(),
            }
            .into());
        }
    }
    let oh = conv_output_size(ConvSpec::new(h, kh, stride, padding))?;
    let ow = conv_output_size(ConvSpec::new(w, kw, stride, padding))?;
    Ok(ConvDims {
        batch,
        in_channels,
        h,
        w,
        out_channels,
        kh,
        kw,
        oh,
        ow,
        stride,
        padding,
        groups,
    })
}

/// Standard 2-d convolution of `x: [N, C, H, W]` with `kernel: [F, C, kH, kW]`
/// and optional `bias: [F]`, producing `[N, F, H', W']`.
pub fn conv2d<E: Element>(
    tape: &GradTape<E>,
    x: Var,
    kernel: Var,
    bias: Option<Var>,
    stride: usize,
    padding: usize,
) -> Result<Var, OpError> {
    conv_impl(tape, x, kernel, bias, stride, padding, 1)
}

/// Grouped convolution: channels are partitioned into `groups` independent
/// slices, each convolved with its own kernels, and the outputs concatenated.
/// `kernel` is `[F, C/groups, kH, kW]`. `groups == 1` is exactly [`conv2d`].
pub fn grouped_conv2d<E: Element>(
    tape: &GradTape<E>,
    x: Var,
    kernel: Var,
    bias: Option<Var>,
    stride: usize,
    padding: usize,
    groups: usize,
) -> Result<Var, OpError> {
    conv_impl(tape, x, kernel, bias, stride, padding, groups)
}

fn conv_impl<E: Element>(
    tape: &GradTape<E>,
    x: Var,
    kernel: Var,
    bias: Option<Var>,
    stride: usize,
    padding: usize,
    groups: usize,
) -> Result<Var, OpError> {
    let x_needs = tape.needs_grad(x);
    let w_needs = tape.needs_grad(kernel);
    let b_needs = bias.map(|b| tape.needs_grad(b)).unwrap_or(false);

    let (value, dims, w_saved, cols_saved) = {
        let xv = tape.value(x);
        let wv = tape.value(kernel);
        let bv = bias.map(|b| tape.value(b));
        let dims = validate(&xv, &wv, bv.as_deref(), stride, padding, groups)?;

        let ckk = dims.ckk();
        let out_plane = dims.out_plane();
        let group_out = dims.group_out();
        let mut out = vec![E::zero(); dims.batch * dims.out_channels * out_plane];
        if let Some(b) = &bv {
            for n in 0..dims.batch {
                for f in 0..dims.out_channels {
                    let start = (n * dims.out_channels + f) * out_plane;
                    let bval = b.data()[f];
                    for v in &mut out[start..start + out_plane] {
                        *v = bval;
                    }
                }
            }
        }

        let in_plane = dims.h * dims.w;
        let group_block = dims.group_in() * in_plane;
        // Column matrices are gathered straight into their retention buffers
        // when the kernel gradient will need them, otherwise into a single
        // reused scratch buffer.
        let mut scratch = if w_needs {
            Vec::new()
        } else {
            vec![E::zero(); ckk * out_plane]
        };
        let mut saved: Vec<Vec<E>> = Vec::new();
        for n in 0..dims.batch {
            for g in 0..groups {
                let x_off = n * dims.in_channels * in_plane + g * group_block;
                let cols: &mut Vec<E> = if w_needs {
                    saved.push(vec![E::zero(); ckk * out_plane]);
                    saved.last_mut().expect("just pushed")
                } else {
                    &mut scratch
                };
                im2col(&xv.data()[x_off..x_off + group_block], &dims, cols);
                let w_off = g * group_out * ckk;
                let o_off = (n * dims.out_channels + g * group_out) * out_plane;
                matmul_nn(
                    &wv.data()[w_off..w_off + group_out * ckk],
                    cols,
                    group_out,
                    ckk,
                    out_plane,
                    &mut out[o_off..o_off + group_out * out_plane],
                );
            }
        }
        let value = Tensor::from_vec(&[dims.batch, dims.out_channels, dims.oh, dims.ow], out)?;
        let w_saved = if x_needs { Some(wv.clone()) } else { None };
        (value, dims, w_saved, saved)
    };

    let mut parents = vec![x, kernel];
    if let Some(b) = bias {
        parents.push(b);
    }
    Ok(tape.push_op(value, &parents, move |grad_out| {
        let ckk = dims.ckk();
        let out_plane = dims.out_plane();
        let group_out = dims.group_out();
        let in_plane = dims.h * dims.w;
        let group_block = dims.group_in() * in_plane;
        let mut contributions = Vec::new();

        if let Some(wv) = &w_saved {
            let mut dx = vec![E::zero(); dims.batch * dims.in_channels * in_plane];
            let mut dcols = vec![E::zero(); ckk * out_plane];
            for n in 0..dims.batch {
                for g in 0..dims.groups {
                    let w_off = g * group_out * ckk;
                    let o_off = (n * dims.out_channels + g * group_out) * out_plane;
                    for v in dcols.iter_mut() {
                        *v = E::zero();
                    }
                    matmul_tn(
                        &wv.data()[w_off..w_off + group_out * ckk],
                        &grad_out.data()[o_off..o_off + group_out * out_plane],
                        ckk,
                        group_out,
                        out_plane,
                        &mut dcols,
                    );
                    let x_off = n * dims.in_channels * in_plane + g * group_block;
                    col2im(&dcols, &dims, &mut dx[x_off..x_off + group_block]);
                }
            }
            contributions.push((
                x,
                Tensor::from_vec(&[dims.batch, dims.in_channels, dims.h, dims.w], dx)
                    .expect("shape"),
            ));
        }

        if !cols_saved.is_empty() {
            let mut dw = vec![E::zero(); dims.out_channels * ckk];
            let mut slot = 0usize;
            for n in 0..dims.batch {
                for g in 0..dims.groups {
                    let o_off = (n * dims.out_channels + g * group_out) * out_plane;
                    let w_off = g * group_out * ckk;
                    matmul_nt(
                        &grad_out.data()[o_off..o_off + group_out * out_plane],
                        &cols_saved[slot],
                        group_out,
                        out_plane,
                        ckk,
                        &mut dw[w_off..w_off + group_out * ckk],
                    );
                    slot += 1;
                }
            }
            contributions.push((
                kernel,
                Tensor::from_vec(&[dims.out_channels, dims.group_in(), dims.kh, dims.kw], dw)
                    .expect("shape"),
            ));
        }

        if b_needs {
            let mut db = vec![E::zero(); dims.out_channels];
            for n in 0..dims.batch {
                for (f, acc) in db.iter_mut().enumerate() {
                    let start = (n * dims.out_channels + f) * out_plane;
                    for &v in &grad_out.data()[start..start + out_plane] {
                        *acc = *acc + v;
                    }
                }
            }
            contributions.push((
                bias.expect("bias var present when gradient requested"),
                Tensor::from_vec(&[dims.out_channels], db).expect("shape"),
            ));
        }
        contributions
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ops::sum;

    #[test]
    fn all_ones_window_sums_to_nine() {
        let tape = GradTape::<f32>::new();
        let x = tape.constant(Tensor::ones(&[1, 1, 3, 3]));
        let k = tape.constant(Tensor::ones(&[1, 1, 3, 3]));
        let y = conv2d(&tape, x, k, None, 1, 0).unwrap();
        let v = tape.value(y);
        assert_eq!(v.shape(), &[1, 1, 1, 1]);
        assert_eq!(v.data(), &[9.0]);
    }

    #[test]
    fn identity_kernel_preserves_input() {
        let tape = GradTape::<f32>::new();
        let data: Vec<f32> = (0..16).map(|v| v as f32).collect();
        let x = tape.constant(Tensor::from_vec(&[1, 1, 4, 4], data.clone()).unwrap());
        let mut k = Tensor::zeros(&[1, 1, 3, 3]);
        k.data_mut()[4] = 1.0; // centre tap
        let k = tape.constant(k);
        let y = conv2d(&tape, x, k, None, 1, 1).unwrap();
        let v = tape.value(y);
        assert_eq!(v.shape(), &[1, 1, 4, 4]);
        assert_eq!(v.data(), &data[..]);
    }

    #[test]
    fn channel_mismatch_is_reported() {
        let tape = GradTape::<f32>::new();
        let x = tape.constant(Tensor::ones(&[1, 3, 5, 5]));
        let k = tape.constant(Tensor::ones(&[2, 2, 3, 3]));
        let err = conv2d(&tape, x, k, None, 1, 0).unwrap_err();
        assert!(err.to_string().contains("kernel input channels"));
    }

    #[test]
    fn depthwise_ones_is_identity_per_channel() {
        let tape = GradTape::<f32>::new();
        let data: Vec<f32> = (0..3 * 4).map(|v| v as f32).collect();
        let x = tape.constant(Tensor::from_vec(&[1, 3, 2, 2], data.clone()).unwrap());
        let k = tape.constant(Tensor::ones(&[3, 1, 1, 1]));
        let y = grouped_conv2d(&tape, x, k, None, 1, 0, 3).unwrap();
        assert_eq!(tape.value(y).data(), &data[..]);
    }

    #[test]
    fn grouped_requires_divisible_channels() {
        let tape = GradTape::<f32>::new();
        let x = tape.constant(Tensor::ones(&[1, 3, 4, 4]));
        let k = tape.constant(Tensor::ones(&[2, 1, 3, 3]));
        assert!(grouped_conv2d(&tape, x, k, None, 1, 0, 2).is_err());
    }

    #[test]
    fn bias_gradient_counts_output_elements() {
        let tape = GradTape::<f32>::new();
        let x = tape.constant(Tensor::ones(&[2, 1, 3, 3]));
        let k = tape.constant(Tensor::ones(&[1, 1, 2, 2]));
        let b = tape.leaf(Tensor::zeros(&[1]), true);
        let y = conv2d(&tape, x, k, Some(b), 1, 0).unwrap();
        let loss = sum(&tape, y);
        tape.backward(loss).unwrap();
        // 2 images x 2x2 output plane = 8 contributions.
        assert_eq!(tape.grad(b).unwrap().data(), &[8.0]);
    }
}
