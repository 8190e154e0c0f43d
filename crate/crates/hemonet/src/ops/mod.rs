//! Differentiable tensor operations.
//!
//! Every function records its result on the caller's [`GradTape`] and returns
//! a [`Var`] handle. Backward closures are captured at record time, so an op
//! only saves what its gradient needs (and skips work for inputs that do not
//! participate in differentiation).

mod conv;
mod linear;
mod norm;
mod pool;

pub use conv::{conv2d, grouped_conv2d};
pub use linear::dense;
pub use norm::batchnorm;
pub use pool::{global_avg_pool, pool2d, PoolMode};

use crate::tape::{GradTape, Var};
use crate::tensor::{Element, ShapeError, Tensor};
use crate::Phase;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

/// Probability floor applied inside the cross-entropy logarithm.
pub const CROSS_ENTROPY_CLIP: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum OpError {
    #[error(transparent)]
    Shape(#[from] ShapeError),
    #[error("dropout rate {rate} outside [0, 1)")]
    DropoutRate { rate: f64 },
    #[error("batch normalization over an empty batch")]
    EmptyBatch,
}

/// Elementwise sum of two equally shaped tensors.
pub fn add<E: Element>(tape: &GradTape<E>, a: Var, b: Var) -> Result<Var, OpError> {
    let value = {
        let av = tape.value(a);
        let bv = tape.value(b);
        av.zip_map(&bv, |x, y| x + y)?
    };
    Ok(tape.push_op(value, &[a, b], move |g| {
        vec![(a, g.clone()), (b, g.clone())]
    }))
}

/// Elementwise product of two equally shaped tensors.
pub fn mul<E: Element>(tape: &GradTape<E>, a: Var, b: Var) -> Result<Var, OpError> {
    let (value, a_saved, b_saved) = {
        let av = tape.value(a);
        let bv = tape.value(b);
        (av.zip_map(&bv, |x, y| x * y)?, av.clone(), bv.clone())
    };
    Ok(tape.push_op(value, &[a, b], move |g| {
        let da = b_saved.zip_map(g, |y, gi| y * gi).expect("shape checked");
        let db = a_saved.zip_map(g, |x, gi| x * gi).expect("shape checked");
        vec![(a, da), (b, db)]
    }))
}

/// Sum of all elements, producing a scalar.
pub fn sum<E: Element>(tape: &GradTape<E>, x: Var) -> Var {
    let (total, shape) = {
        let v = tape.value(x);
        (v.sum(), v.shape().to_vec())
    };
    tape.push_op(Tensor::scalar(total), &[x], move |g| {
        vec![(x, Tensor::filled(&shape, g.data()[0]))]
    })
}

/// Shape change that preserves the element count; gradients flow through
/// unchanged.
pub fn reshape<E: Element>(tape: &GradTape<E>, x: Var, shape: &[usize]) -> Result<Var, OpError> {
    let (value, old_shape) = {
        let v = tape.value(x);
        (v.clone().reshape(shape)?, v.shape().to_vec())
    };
    Ok(tape.push_op(value, &[x], move |g| {
        let back = g.clone().reshape(&old_shape).expect("same element count");
        vec![(x, back)]
    }))
}

/// Flattens `[N, ...]` to `[N, D]`.
pub fn flatten<E: Element>(tape: &GradTape<E>, x: Var) -> Result<Var, OpError> {
    let shape = tape.value(x).shape().to_vec();
    let n = shape.first().copied().unwrap_or(0);
    let d: usize = shape.iter().skip(1).product();
    reshape(tape, x, &[n, d])
}

/// Elementwise `max(0, x)`.
pub fn relu<E: Element>(tape: &GradTape<E>, x: Var) -> Var {
    let (value, mask) = {
        let v = tape.value(x);
        let mask: Vec<bool> = v.data().iter().map(|&e| e > E::zero()).collect();
        (v.map(|e| if e > E::zero() { e } else { E::zero() }), mask)
    };
    tape.push_op(value, &[x], move |g| {
        let mut dx = g.clone();
        for (d, &m) in dx.data_mut().iter_mut().zip(&mask) {
            if !m {
                *d = E::zero();
            }
        }
        vec![(x, dx)]
    })
}

/// Elementwise logistic sigmoid.
pub fn sigmoid<E: Element>(tape: &GradTape<E>, x: Var) -> Var {
    let value = tape.value(x).map(|e| E::one() / (E::one() + (-e).exp()));
    let saved = value.clone();
    tape.push_op(value, &[x], move |g| {
        let dx = saved
            .zip_map(g, |y, gi| y * (E::one() - y) * gi)
            .expect("shape checked");
        vec![(x, dx)]
    })
}

/// Row-wise softmax over `[N, K]` logits, computed with max subtraction so
/// large logits cannot overflow.
pub fn softmax<E: Element>(tape: &GradTape<E>, logits: Var) -> Result<Var, OpError> {
    let value = {
        let v = tape.value(logits);
        v.expect_rank(2)?;
        let (n, k) = (v.dim(0), v.dim(1));
        if k == 0 {
            return Err(ShapeError::ZeroExtent { field: "classes" }.into());
        }
        let mut out = vec![E::zero(); n * k];
        for row in 0..n {
            let src = &v.data()[row * k..(row + 1) * k];
            let max = src.iter().fold(E::neg_infinity(), |m, &e| m.max(e));
            let dst = &mut out[row * k..(row + 1) * k];
            let mut total = E::zero();
            for (d, &s) in dst.iter_mut().zip(src) {
                *d = (s - max).exp();
                total = total + *d;
            }
            for d in dst.iter_mut() {
                *d = *d / total;
            }
        }
        Tensor::from_vec(v.shape(), out)?
    };
    let saved = value.clone();
    Ok(tape.push_op(value, &[logits], move |g| {
        let (n, k) = (saved.dim(0), saved.dim(1));
        let mut dx = vec![E::zero(); n * k];
        for row in 0..n {
            let p = &saved.data()[row * k..(row + 1) * k];
            let go = &g.data()[row * k..(row + 1) * k];
            let mut dot = E::zero();
            for (&pi, &gi) in p.iter().zip(go) {
                dot = dot + pi * gi;
            }
            for ((d, &pi), &gi) in dx[row * k..(row + 1) * k].iter_mut().zip(p).zip(go) {
                *d = pi * (gi - dot);
            }
        }
        vec![(logits, Tensor::from_vec(saved.shape(), dx).expect("shape"))]
    }))
}

/// Mean categorical cross-entropy between probability rows and one-hot
/// targets: `-(1/N) * sum(y * ln(p + clip))`.
pub fn cross_entropy<E: Element>(
    tape: &GradTape<E>,
    probs: Var,
    targets: Var,
) -> Result<Var, OpError> {
    let (value, p_saved, y_saved) = {
        let p = tape.value(probs);
        let y = tape.value(targets);
        p.expect_rank(2)?;
        if p.shape() != y.shape() {
            return Err(ShapeError::DimensionMismatch {
                what: "cross-entropy probabilities vs targets",
                expected: p.len(),
                actual: y.len(),
            }
            .into());
        }
        let clip = E::from_f64(CROSS_ENTROPY_CLIP);
        let n = E::from_f64(p.dim(0) as f64);
        let mut total = E::zero();
        for (&pi, &yi) in p.data().iter().zip(y.data()) {
            if yi != E::zero() {
                total = total - yi * (pi + clip).ln();
            }
        }
        (Tensor::scalar(total / n), p.clone(), y.clone())
    };
    Ok(tape.push_op(value, &[probs, targets], move |g| {
        let clip = E::from_f64(CROSS_ENTROPY_CLIP);
        let scale = g.data()[0] / E::from_f64(p_saved.dim(0) as f64);
        let dp = p_saved
            .zip_map(&y_saved, |pi, yi| -scale * yi / (pi + clip))
            .expect("shape checked");
        vec![(probs, dp)]
    }))
}

/// Inverted dropout: in train mode each element is zeroed with probability
/// `rate` and survivors are scaled by `1/(1-rate)`; eval mode is the
/// identity. The mask depends only on `seed`.
pub fn dropout<E: Element>(
    tape: &GradTape<E>,
    x: Var,
    rate: f64,
    phase: Phase,
    seed: u64,
) -> Result<Var, OpError> {
    if !(0.0..1.0).contains(&rate) {
        return Err(OpError::DropoutRate { rate });
    }
    if phase == Phase::Eval || rate == 0.0 {
        return Ok(x);
    }
    let keep_scale = E::from_f64(1.0 / (1.0 - rate));
    let (value, mask) = {
        let v = tape.value(x);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mask: Vec<E> = (0..v.len())
            .map(|_| {
                if rng.random::<f64>() < rate {
                    E::zero()
                } else {
                    keep_scale
                }
            })
            .collect();
        let mut value = v.clone();
        for (d, &m) in value.data_mut().iter_mut().zip(&mask) {
            *d = *d * m;
        }
        (value, mask)
    };
    Ok(tape.push_op(value, &[x], move |g| {
        let mut dx = g.clone();
        for (d, &m) in dx.data_mut().iter_mut().zip(&mask) {
            *d = *d * m;
        }
        vec![(x, dx)]
    }))
}

/// Concatenation of `[N, C_i, H, W]` tensors along the channel axis.
pub fn concat_channels<E: Element>(tape: &GradTape<E>, parts: &[Var]) -> Result<Var, OpError> {
    assert!(
        !parts.is_empty(),
        "concat_channels needs at least one input"
    );
    let (value, channel_counts) = {
        let views: Vec<_> = parts.iter().map(|&p| tape.value(p)).collect();
        let first = &views[0];
        first.expect_rank(4)?;
        let (n, h, w) = (first.dim(0), first.dim(2), first.dim(3));
        let mut channels = Vec::with_capacity(views.len());
        for v in &views {
            v.expect_rank(4)?;
            if v.dim(0) != n || v.dim(2) != h || v.dim(3) != w {
                return Err(ShapeError::DimensionMismatch {
                    what: "concat_channels batch/spatial extents",
                    expected: n * h * w,
                    actual: v.dim(0) * v.dim(2) * v.dim(3),
                }
                .into());
            }
            channels.push(v.dim(1));
        }
        let total_c: usize = channels.iter().sum();
        let plane = h * w;
        let mut out = vec![E::zero(); n * total_c * plane];
        for img in 0..n {
            let mut offset = img * total_c * plane;
            for v in &views {
                let c = v.dim(1);
                let block = c * plane;
                let src = &v.data()[img * block..(img + 1) * block];
                out[offset..offset + block].copy_from_slice(src);
                offset += block;
            }
        }
        (Tensor::from_vec(&[n, total_c, h, w], out)?, channels)
    };
    let vars = parts.to_vec();
    Ok(tape.push_op(value, parts, move |g| {
        let n = g.dim(0);
        let total_c = g.dim(1);
        let plane = g.dim(2) * g.dim(3);
        let mut grads: Vec<Tensor<E>> = channel_counts
            .iter()
            .map(|&c| Tensor::zeros(&[n, c, g.dim(2), g.dim(3)]))
            .collect();
        for img in 0..n {
            let mut offset = img * total_c * plane;
            for (gi, &c) in grads.iter_mut().zip(&channel_counts) {
                let block = c * plane;
                gi.data_mut()[img * block..(img + 1) * block]
                    .copy_from_slice(&g.data()[offset..offset + block]);
                offset += block;
            }
        }
        vars.iter().copied().zip(grads).collect()
    }))
}

/// Scales each `[H, W]` plane of `x: [N, C, H, W]` by the matching entry of
/// `gate: [N, C]`.
pub fn scale_channels<E: Element>(tape: &GradTape<E>, x: Var, gate: Var) -> Result<Var, OpError> {
    let (value, x_saved, gate_saved) = {
        let xv = tape.value(x);
        let gv = tape.value(gate);
        xv.expect_rank(4)?;
        gv.expect_rank(2)?;
        if gv.dim(0) != xv.dim(0) || gv.dim(1) != xv.dim(1) {
            return Err(ShapeError::DimensionMismatch {
                what: "channel gate extents",
                expected: xv.dim(0) * xv.dim(1),
                actual: gv.dim(0) * gv.dim(1),
            }
            .into());
        }
        let plane = xv.dim(2) * xv.dim(3);
        let mut out = xv.clone();
        for (chunk, &g) in out.data_mut().chunks_mut(plane).zip(gv.data()) {
            for v in chunk {
                *v = *v * g;
            }
        }
        (out, xv.clone(), gv.clone())
    };
    Ok(tape.push_op(value, &[x, gate], move |g| {
        let plane = x_saved.dim(2) * x_saved.dim(3);
        let mut dx = g.clone();
        for (chunk, &gv) in dx.data_mut().chunks_mut(plane).zip(gate_saved.data()) {
            for v in chunk {
                *v = *v * gv;
            }
        }
        let mut dgate = Tensor::zeros(gate_saved.shape());
        for ((chunk_g, chunk_x), dg) in g
            .data()
            .chunks(plane)
            .zip(x_saved.data().chunks(plane))
            .zip(dgate.data_mut())
        {
            let mut acc = E::zero();
            for (&gi, &xi) in chunk_g.iter().zip(chunk_x) {
                acc = acc + gi * xi;
            }
            *dg = acc;
        }
        vec![(x, dx), (gate, dgate)]
    }))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tape_with<E: Element>(shape: &[usize], data: Vec<E>) -> (GradTape<E>, Var) {
        let tape = GradTape::new();
        let x = tape.leaf(Tensor::from_vec(shape, data).unwrap(), true);
        (tape, x)
    }

    #[test]
    fn relu_clamps_negatives() {
        let (tape, x) = tape_with::<f32>(&[3], vec![-1.0, 0.0, 2.0]);
        let y = relu(&tape, x);
        assert_eq!(tape.value(y).data(), &[0.0, 0.0, 2.0]);
        let all_neg = tape.leaf(Tensor::from_vec(&[2], vec![-3.0, -0.5]).unwrap(), false);
        let z = relu(&tape, all_neg);
        assert_eq!(tape.value(z).data(), &[0.0, 0.0]);
    }

    #[test]
    fn softmax_rows_are_distributions() {
        let (tape, x) = tape_with::<f64>(&[1, 4], vec![0.0; 4]);
        let p = softmax(&tape, x).unwrap();
        assert_eq!(tape.value(p).data(), &[0.25, 0.25, 0.25, 0.25]);
    }

    #[test]
    fn softmax_survives_large_logits() {
        let (tape, x) = tape_with::<f32>(&[1, 2], vec![1000.0, 0.0]);
        let p = softmax(&tape, x).unwrap();
        let v = tape.value(p);
        assert!(v.all_finite());
        assert!((v.data()[0] - 1.0).abs() < 1e-6);
        assert!(v.data()[1].abs() < 1e-6);
    }

    #[test]
    fn softmax_matches_closed_form() {
        let (tape, x) = tape_with::<f64>(&[1, 3], vec![1.0f64.ln(), 2.0f64.ln(), 3.0f64.ln()]);
        let p = softmax(&tape, x).unwrap();
        let v = tape.value(p);
        let expected = [1.0 / 6.0, 2.0 / 6.0, 3.0 / 6.0];
        for (got, want) in v.data().iter().zip(expected) {
            assert!((got - want).abs() < 1e-6, "{got} vs {want}");
        }
    }

    #[test]
    fn cross_entropy_perfect_prediction_is_zero() {
        let tape = GradTape::<f64>::new();
        let p = tape.leaf(
            Tensor::from_vec(&[1, 3], vec![0.0, 1.0, 0.0]).unwrap(),
            false,
        );
        let y = tape.constant(Tensor::from_vec(&[1, 3], vec![0.0, 1.0, 0.0]).unwrap());
        let loss = cross_entropy(&tape, p, y).unwrap();
        assert!(tape.value(loss).data()[0].abs() < 1e-9);
    }

    #[test]
    fn cross_entropy_uniform_is_log_k() {
        let tape = GradTape::<f64>::new();
        let p = tape.leaf(Tensor::filled(&[1, 4], 0.25), false);
        let y = tape.constant(Tensor::from_vec(&[1, 4], vec![1.0, 0.0, 0.0, 0.0]).unwrap());
        let loss = cross_entropy(&tape, p, y).unwrap();
        assert!((tape.value(loss).data()[0] - 4.0f64.ln()).abs() < 1e-9);
    }

    #[test]
    fn dropout_eval_and_zero_rate_are_identity() {
        let (tape, x) = tape_with::<f32>(&[4], vec![1.0, 2.0, 3.0, 4.0]);
        let eval = dropout(&tape, x, 0.5, Phase::Eval, 7).unwrap();
        assert_eq!(eval, x);
        let zero = dropout(&tape, x, 0.0, Phase::Train, 7).unwrap();
        assert_eq!(zero, x);
        assert!(dropout(&tape, x, 1.0, Phase::Train, 7).is_err());
        assert!(dropout(&tape, x, -0.1, Phase::Train, 7).is_err());
    }

    #[test]
    fn dropout_statistics_match_rate() {
        let n = 100_000usize;
        let tape = GradTape::<f32>::new();
        let x = tape.leaf(Tensor::ones(&[n]), false);
        let y = dropout(&tape, x, 0.1, Phase::Train, 42).unwrap();
        let v = tape.value(y);
        let dropped = v.data().iter().filter(|&&e| e == 0.0).count();
        let frac = dropped as f64 / n as f64;
        assert!((frac - 0.1).abs() < 0.01, "drop fraction {frac}");
        // Inverted scaling keeps the expectation near 1.
        let mean = v.data().iter().map(|&e| e as f64).sum::<f64>() / n as f64;
        assert!((mean - 1.0).abs() < 0.01, "survivor mean {mean}");
    }

    #[test]
    fn dropout_is_deterministic_per_seed() {
        let (tape, x) = tape_with::<f32>(&[64], vec![1.0; 64]);
        let a = dropout(&tape, x, 0.3, Phase::Train, 9).unwrap();
        let b = dropout(&tape, x, 0.3, Phase::Train, 9).unwrap();
        let c = dropout(&tape, x, 0.3, Phase::Train, 10).unwrap();
        assert_eq!(tape.value(a).data(), tape.value(b).data());
        assert_ne!(tape.value(a).data(), tape.value(c).data());
    }

    #[test]
    fn concat_channels_stacks_and_splits() {
        let tape = GradTape::<f64>::new();
        let a = tape.leaf(Tensor::filled(&[1, 2, 2, 2], 1.0), true);
        let b = tape.leaf(Tensor::filled(&[1, 1, 2, 2], 2.0), true);
        let c = concat_channels(&tape, &[a, b]).unwrap();
        {
            let v = tape.value(c);
            assert_eq!(v.shape(), &[1, 3, 2, 2]);
            assert_eq!(&v.data()[..8], &[1.0; 8]);
            assert_eq!(&v.data()[8..], &[2.0; 4]);
        }
        let loss = sum(&tape, c);
        tape.backward(loss).unwrap();
        assert_eq!(tape.grad(a).unwrap().shape(), &[1, 2, 2, 2]);
        assert_eq!(tape.grad(b).unwrap().shape(), &[1, 1, 2, 2]);
        assert_eq!(tape.grad(a).unwrap().data(), &[1.0; 8]);
    }

    #[test]
    fn scale_channels_applies_gate() {
        let tape = GradTape::<f64>::new();
        let x = tape.leaf(Tensor::filled(&[1, 2, 2, 2], 3.0), true);
        let gate = tape.leaf(Tensor::from_vec(&[1, 2], vec![0.5, 2.0]).unwrap(), true);
        let y = scale_channels(&tape, x, gate).unwrap();
        {
            let v = tape.value(y);
            assert_eq!(&v.data()[..4], &[1.5; 4]);
            assert_eq!(&v.data()[4..], &[6.0; 4]);
        }
        let loss = sum(&tape, y);
        tape.backward(loss).unwrap();
        // d/dgate = sum of the plane values of x.
        assert_eq!(tape.grad(gate).unwrap().data(), &[12.0, 12.0]);
    }
}
