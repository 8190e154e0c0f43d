//! Dense n-dimensional tensors of floating-point values.
//!
//! Storage is always row-major and contiguous; convolutional data uses the
//! `[N, C, H, W]` layout throughout the crate. Gradient bookkeeping does not
//! live here: tensors are plain values, and participation in differentiation
//! is decided when a tensor is bound to a [`GradTape`](crate::tape::GradTape)
//! as a leaf.

use num_traits::Float;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Scalar element of a [`Tensor`]. Implemented for `f32` (storage) and `f64`
/// (used by tests that re-evaluate forward passes in higher precision).
pub trait Element:
    Float + std::fmt::Debug + std::fmt::Display + Default + Send + Sync + 'static
{
    fn from_f64(v: f64) -> Self;
    fn as_f64(self) -> f64;
}

impl Element for f32 {
    fn from_f64(v: f64) -> Self {
        v as f32
    }
    fn as_f64(self) -> f64 {
        self as f64
    }
}

impl Element for f64 {
    fn from_f64(v: f64) -> Self {
        v
    }
    fn as_f64(self) -> f64 {
        self
    }
}

/// Errors produced by shape arithmetic and tensor construction.
#[derive(Debug, Error, PartialEq, Eq)]
pub enum ShapeError {
    #[error("shape {shape:?} implies {expected} values but {actual} were provided")]
    DataLength {
        shape: Vec<usize>,
        expected: usize,
        actual: usize,
    },
    #[error("invalid convolution spec: input {input} + 2*padding {padding} is smaller than kernel {kernel}")]
    KernelExceedsInput {
        input: usize,
        kernel: usize,
        padding: usize,
    },
    #[error("invalid convolution spec: {field} must be at least 1")]
    ZeroExtent { field: &'static str },
    #[error("dimension mismatch on {what}: expected {expected}, got {actual}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        actual: usize,
    },
    #[error("expected rank-{expected} tensor, got shape {shape:?}")]
    Rank { expected: usize, shape: Vec<usize> },
    #[error("reshape of {len} values to {shape:?} does not preserve the element count")]
    Reshape { len: usize, shape: Vec<usize> },
}

/// Geometry of a 1-d convolution pass: input extent, kernel extent, stride,
/// and symmetric padding. Spatial dimensions are treated independently, so a
/// 2-d convolution validates one spec per axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvSpec {
    pub input: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
}

impl ConvSpec {
    pub fn new(input: usize, kernel: usize, stride: usize, padding: usize) -> Self {
        Self {
            input,
            kernel,
            stride,
            padding,
        }
    }
}

/// Output extent of a convolution: `floor((input + 2*padding - kernel) / stride) + 1`.
///
/// With zero padding this is the familiar `floor((P - Q) / R) + 1` rule used
/// to trace layer shapes through a stack of convolutions.
pub fn conv_output_size(spec: ConvSpec) -> Result<usize, ShapeError> {
    if spec.input == 0 {
        return Err(ShapeError::ZeroExtent { field: "input" });
    }
    if spec.kernel == 0 {
        return Err(ShapeError::ZeroExtent { field: "kernel" });
    }
    if spec.stride == 0 {
        return Err(ShapeError::ZeroExtent { field: "stride" });
    }
    let padded = spec.input + 2 * spec.padding;
    if padded < spec.kernel {
        return Err(ShapeError::KernelExceedsInput {
            input: spec.input,
            kernel: spec.kernel,
            padding: spec.padding,
        });
    }
    Ok((padded - spec.kernel) / spec.stride + 1)
}

/// Padding that preserves spatial extent for stride-1 convolutions with an
/// odd kernel: `(kernel - 1) / 2`.
pub fn same_padding(kernel: usize) -> usize {
    kernel.saturating_sub(1) / 2
}

/// Dense row-major tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<E: Element = f32> {
    shape: Vec<usize>,
    data: Vec<E>,
}

impl<E: Element> Tensor<E> {
    /// Builds a tensor from raw values; the value count must match the shape.
    pub fn from_vec(shape: &[usize], data: Vec<E>) -> Result<Self, ShapeError> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(ShapeError::DataLength {
                shape: shape.to_vec(),
                expected,
                actual: data.len(),
            });
        }
        Ok(Self {
            shape: shape.to_vec(),
            data,
        })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self {
            shape: shape.to_vec(),
            data: vec![E::zero(); shape.iter().product()],
        }
    }

    pub fn ones(shape: &[usize]) -> Self {
        Self::filled(shape, E::one())
    }

    pub fn filled(shape: &[usize], value: E) -> Self {
        Self {
            shape: shape.to_vec(),
            data: vec![value; shape.iter().product()],
        }
    }

    /// Scalar tensor of shape `[1]`.
    pub fn scalar(value: E) -> Self {
        Self {
            shape: vec![1],
            data: vec![value],
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[E] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [E] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<E> {
        self.data
    }

    /// Reinterprets the data under a new shape with the same element count.
    pub fn reshape(mut self, shape: &[usize]) -> Result<Self, ShapeError> {
        let expected: usize = shape.iter().product();
        if expected != self.data.len() {
            return Err(ShapeError::Reshape {
                len: self.data.len(),
                shape: shape.to_vec(),
            });
        }
        self.shape = shape.to_vec();
        Ok(self)
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    /// Extent of one axis.
    pub fn dim(&self, axis: usize) -> usize {
        self.shape[axis]
    }

    pub fn expect_rank(&self, rank: usize) -> Result<(), ShapeError> {
        if self.rank() == rank {
            Ok(())
        } else {
            Err(ShapeError::Rank {
                expected: rank,
                shape: self.shape.clone(),
            })
        }
    }

    pub fn map(&self, f: impl Fn(E) -> E) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Self, f: impl Fn(E, E) -> E) -> Result<Self, ShapeError> {
        if self.shape != other.shape {
            return Err(ShapeError::DimensionMismatch {
                what: "elementwise operand shapes",
                expected: self.len(),
                actual: other.len(),
            });
        }
        Ok(Self {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    /// `self += other`, shapes must match.
    pub fn add_assign(&mut self, other: &Self) {
        debug_assert_eq!(self.shape, other.shape);
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a = *a + *b;
        }
    }

    pub fn scale(&mut self, factor: E) {
        for v in &mut self.data {
            *v = *v * factor;
        }
    }

    pub fn sum(&self) -> E {
        self.data.iter().fold(E::zero(), |acc, &v| acc + v)
    }

    /// True when every stored value is finite.
    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Converts element type, used by tests that re-run graphs in `f64`.
    pub fn cast<T: Element>(&self) -> Tensor<T> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|v| T::from_f64(v.as_f64())).collect(),
        }
    }
}

impl Tensor<f32> {
    /// Maximum absolute elementwise difference, for test tolerances.
    pub fn max_abs_diff(&self, other: &Self) -> f32 {
        debug_assert_eq!(self.shape(), other.shape());
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f32::max)
    }
}

/// `out += a @ b` for row-major `a: [m,k]`, `b: [k,n]`, `out: [m,n]`.
///
/// Rows of `out` are processed four at a time so each streamed `b` row is
/// reused across four accumulator rows.
pub(crate) fn matmul_nn<E: Element>(a: &[E], b: &[E], m: usize, k: usize, n: usize, out: &mut [E]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(out.len(), m * n);
    let mut i = 0;
    while i + 4 <= m {
        let (head, tail) = out[i * n..].split_at_mut(2 * n);
        let (o0, o1) = head.split_at_mut(n);
        let (o2, rest) = tail.split_at_mut(n);
        let o3 = &mut rest[..n];
        for p in 0..k {
            let a0 = a[i * k + p];
            let a1 = a[(i + 1) * k + p];
            let a2 = a[(i + 2) * k + p];
            let a3 = a[(i + 3) * k + p];
            let b_row = &b[p * n..(p + 1) * n];
            for j in 0..n {
                let bv = b_row[j];
                o0[j] = o0[j] + a0 * bv;
                o1[j] = o1[j] + a1 * bv;
                o2[j] = o2[j] + a2 * bv;
                o3[j] = o3[j] + a3 * bv;
            }
        }
        i += 4;
    }
    for i in i..m {
        let out_row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == E::zero() {
                continue;
            }
            let b_row = &b[p * n..(p + 1) * n];
            for (o, &bv) in out_row.iter_mut().zip(b_row) {
                *o = *o + av * bv;
            }
        }
    }
}

/// `out += a @ b^T` for row-major `a: [m,k]`, `b: [n,k]`, `out: [m,n]`.
///
/// Dot products are computed in 2x2 tiles with independent accumulators.
pub(crate) fn matmul_nt<E: Element>(a: &[E], b: &[E], m: usize, k: usize, n: usize, out: &mut [E]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), n * k);
    debug_assert_eq!(out.len(), m * n);
    let mut i = 0;
    while i + 2 <= m {
        let a0 = &a[i * k..(i + 1) * k];
        let a1 = &a[(i + 1) * k..(i + 2) * k];
        let mut j = 0;
        while j + 2 <= n {
            let b0 = &b[j * k..(j + 1) * k];
            let b1 = &b[(j + 1) * k..(j + 2) * k];
            let (mut s00, mut s01, mut s10, mut s11) = (E::zero(), E::zero(), E::zero(), E::zero());
            for p in 0..k {
                let (x0, x1) = (a0[p], a1[p]);
                let (y0, y1) = (b0[p], b1[p]);
                s00 = s00 + x0 * y0;
                s01 = s01 + x0 * y1;
                s10 = s10 + x1 * y0;
                s11 = s11 + x1 * y1;
            }
            out[i * n + j] = out[i * n + j] + s00;
            out[i * n + j + 1] = out[i * n + j + 1] + s01;
            out[(i + 1) * n + j] = out[(i + 1) * n + j] + s10;
            out[(i + 1) * n + j + 1] = out[(i + 1) * n + j + 1] + s11;
            j += 2;
        }
        for j in j..n {
            let b0 = &b[j * k..(j + 1) * k];
            let (mut s0, mut s1) = (E::zero(), E::zero());
            for p in 0..k {
                s0 = s0 + a0[p] * b0[p];
                s1 = s1 + a1[p] * b0[p];
            }
            out[i * n + j] = out[i * n + j] + s0;
            out[(i + 1) * n + j] = out[(i + 1) * n + j] + s1;
        }
        i += 2;
    }
    for i in i..m {
        let a_row = &a[i * k..(i + 1) * k];
        for j in 0..n {
            let b_row = &b[j * k..(j + 1) * k];
            let mut acc = E::zero();
            for (&av, &bv) in a_row.iter().zip(b_row) {
                acc = acc + av * bv;
            }
            out[i * n + j] = out[i * n + j] + acc;
        }
    }
}

/// `out += a^T @ b` for row-major `a: [k,m]`, `b: [k,n]`, `out: [m,n]`.
pub(crate) fn matmul_tn<E: Element>(a: &[E], b: &[E], m: usize, k: usize, n: usize, out: &mut [E]) {
    debug_assert_eq!(a.len(), k * m);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(out.len(), m * n);
    let mut i = 0;
    while i + 4 <= m {
        let (head, tail) = out[i * n..].split_at_mut(2 * n);
        let (o0, o1) = head.split_at_mut(n);
        let (o2, rest) = tail.split_at_mut(n);
        let o3 = &mut rest[..n];
        for p in 0..k {
            let a_row = &a[p * m..(p + 1) * m];
            let (a0, a1, a2, a3) = (a_row[i], a_row[i + 1], a_row[i + 2], a_row[i + 3]);
            let b_row = &b[p * n..(p + 1) * n];
            for j in 0..n {
                let bv = b_row[j];
                o0[j] = o0[j] + a0 * bv;
                o1[j] = o1[j] + a1 * bv;
                o2[j] = o2[j] + a2 * bv;
                o3[j] = o3[j] + a3 * bv;
            }
        }
        i += 4;
    }
    for i in i..m {
        for p in 0..k {
            let av = a[p * m + i];
            if av == E::zero() {
                continue;
            }
            let b_row = &b[p * n..(p + 1) * n];
            let out_row = &mut out[i * n..(i + 1) * n];
            for (o, &bv) in out_row.iter_mut().zip(b_row) {
                *o = *o + av * bv;
            }
        }
    }
}
