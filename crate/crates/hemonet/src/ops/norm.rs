//! Batch normalization over `[N, C, H, W]`, normalizing each channel across
//! the batch and spatial axes.

use super::OpError;
use crate::tape::{GradTape, Var};
use crate::tensor::{Element, ShapeError, Tensor};
use crate::Phase;

/// Train mode normalizes by batch statistics (biased variance) and folds them
/// into the running estimates via `r = momentum * r + (1 - momentum) * batch`;
/// eval mode normalizes by the running estimates alone.
#[allow(clippy::too_many_arguments)]
pub fn batchnorm<E: Element>(
    tape: &GradTape<E>,
    x: Var,
    gamma: Var,
    beta: Var,
    running_mean: &mut Tensor<E>,
    running_var: &mut Tensor<E>,
    phase: Phase,
    epsilon: f64,
    momentum: f64,
) -> Result<Var, OpError> {
    let (value, x_hat, inv_std, gamma_saved, dims) = {
        let xv = tape.value(x);
        let gv = tape.value(gamma);
        let bv = tape.value(beta);
        xv.expect_rank(4)?;
        let (n, c, h, w) = (xv.dim(0), xv.dim(1), xv.dim(2), xv.dim(3));
        let plane = h * w;
        let m = n * plane;
        if m == 0 {
            return Err(OpError::EmptyBatch);
        }
        for (name, t) in [("gamma", &gv), ("beta", &bv)] {
            if t.shape() != [c] {
                return Err(ShapeError::DimensionMismatch {
                    what: if name == "gamma" {
                        "batchnorm scale length"
                    } else {
                        "batchnorm shift length"
                    },
                    expected: c,
                    actual: t.len(),
                }
                .into());
            }
        }
        debug_assert_eq!(running_mean.shape(), [c]);
        debug_assert_eq!(running_var.shape(), [c]);

        let eps = E::from_f64(epsilon);
        let (mean, var): (Vec<E>, Vec<E>) = match phase {
            Phase::Train => {
                let inv_m = E::one() / E::from_f64(m as f64);
                let mut mean = vec![E::zero(); c];
                for img in 0..n {
                    for (ch, acc) in mean.iter_mut().enumerate() {
                        let start = (img * c + ch) * plane;
                        for &v in &xv.data()[start..start + plane] {
                            *acc = *acc + v;
                        }
                    }
                }
                for v in mean.iter_mut() {
                    *v = *v * inv_m;
                }
                let mut var = vec![E::zero(); c];
                for img in 0..n {
                    for (ch, acc) in var.iter_mut().enumerate() {
                        let mu = mean[ch];
                        let start = (img * c + ch) * plane;
                        for &v in &xv.data()[start..start + plane] {
                            let d = v - mu;
                            *acc = *acc + d * d;
                        }
                    }
                }
                for v in var.iter_mut() {
                    *v = *v * inv_m;
                }
                let keep = E::from_f64(momentum);
                let blend = E::one() - keep;
                for ((r, &b), (rv, &bv)) in running_mean
                    .data_mut()
                    .iter_mut()
                    .zip(&mean)
                    .zip(running_var.data_mut().iter_mut().zip(&var))
                {
                    *r = keep * *r + blend * b;
                    *rv = keep * *rv + blend * bv;
                }
                (mean, var)
            }
            Phase::Eval => (running_mean.data().to_vec(), running_var.data().to_vec()),
        };

        let inv_std: Vec<E> = var.iter().map(|&v| E::one() / (v + eps).sqrt()).collect();
        let mut x_hat = vec![E::zero(); xv.len()];
        let mut out = vec![E::zero(); xv.len()];
        for img in 0..n {
            for ch in 0..c {
                let start = (img * c + ch) * plane;
                let (mu, istd) = (mean[ch], inv_std[ch]);
                let (g, b) = (gv.data()[ch], bv.data()[ch]);
                for i in start..start + plane {
                    let xh = (xv.data()[i] - mu) * istd;
                    x_hat[i] = xh;
                    out[i] = g * xh + b;
                }
            }
        }
        (
            Tensor::from_vec(xv.shape(), out)?,
            x_hat,
            inv_std,
            gv.clone(),
            [n, c, h, w],
        )
    };

    let [n, c, h, w] = dims;
    let plane = h * w;
    Ok(tape.push_op(value, &[x, gamma, beta], move |g| {
        let m = E::from_f64((n * plane) as f64);
        // Per-channel reductions of g and g * x_hat.
        let mut sum_g = vec![E::zero(); c];
        let mut sum_gx = vec![E::zero(); c];
        for img in 0..n {
            for ch in 0..c {
                let start = (img * c + ch) * plane;
                let span = start..start + plane;
                for (&gi, &xh) in g.data()[span.clone()].iter().zip(&x_hat[span]) {
                    sum_g[ch] = sum_g[ch] + gi;
                    sum_gx[ch] = sum_gx[ch] + gi * xh;
                }
            }
        }
        let mut dx = vec![E::zero(); g.len()];
        for img in 0..n {
            for ch in 0..c {
                let start = (img * c + ch) * plane;
                let span = start..start + plane;
                let scale = gamma_saved.data()[ch] * inv_std[ch];
                match phase {
                    Phase::Train => {
                        let mean_g = sum_g[ch] / m;
                        let mean_gx = sum_gx[ch] / m;
                        for ((d, &gi), &xh) in dx[span.clone()]
                            .iter_mut()
                            .zip(&g.data()[span.clone()])
                            .zip(&x_hat[span])
                        {
                            *d = scale * (gi - mean_g - xh * mean_gx);
                        }
                    }
                    Phase::Eval => {
                        for (d, &gi) in dx[span.clone()].iter_mut().zip(&g.data()[span]) {
                            *d = scale * gi;
                        }
                    }
                }
            }
        }
        vec![
            (x, Tensor::from_vec(&[n, c, h, w], dx).expect("shape")),
            (gamma, Tensor::from_vec(&[c], sum_gx).expect("shape")),
            (beta, Tensor::from_vec(&[c], sum_g).expect("shape")),
        ]
    }))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bn_state<E: Element>(c: usize) -> (Tensor<E>, Tensor<E>) {
        (Tensor::zeros(&[c]), Tensor::ones(&[c]))
    }

    #[test]
    fn constant_input_collapses_to_shift() {
        let tape = GradTape::<f32>::new();
        let x = tape.constant(Tensor::filled(&[2, 1, 2, 2], 5.0));
        let gamma = tape.constant(Tensor::ones(&[1]));
        let beta = tape.constant(Tensor::filled(&[1], 0.75));
        let (mut rm, mut rv) = bn_state(1);
        let y = batchnorm(
            &tape,
            x,
            gamma,
            beta,
            &mut rm,
            &mut rv,
            Phase::Train,
            1e-5,
            0.9,
        )
        .unwrap();
        for &v in tape.value(y).data() {
            assert!((v - 0.75).abs() < 1e-3, "got {v}");
        }
    }

    #[test]
    fn normalizes_to_zero_mean_unit_variance() {
        let tape = GradTape::<f64>::new();
        let data: Vec<f64> = (0..32).map(|i| (i as f64) * 0.37 - 3.0).collect();
        let x = tape.constant(Tensor::from_vec(&[4, 2, 2, 2], data).unwrap());
        let gamma = tape.constant(Tensor::ones(&[2]));
        let beta = tape.constant(Tensor::zeros(&[2]));
        let (mut rm, mut rv) = bn_state(2);
        let y = batchnorm(
            &tape,
            x,
            gamma,
            beta,
            &mut rm,
            &mut rv,
            Phase::Train,
            1e-5,
            0.9,
        )
        .unwrap();
        let v = tape.value(y);
        for ch in 0..2 {
            let mut vals = Vec::new();
            for img in 0..4 {
                let start = (img * 2 + ch) * 4;
                vals.extend_from_slice(&v.data()[start..start + 4]);
            }
            let mean: f64 = vals.iter().sum::<f64>() / vals.len() as f64;
            let var: f64 =
                vals.iter().map(|&e| (e - mean) * (e - mean)).sum::<f64>() / vals.len() as f64;
            assert!(mean.abs() < 1e-4, "channel {ch} mean {mean}");
            assert!((var - 1.0).abs() < 1e-4, "channel {ch} var {var}");
        }
    }

    #[test]
    fn eval_mode_uses_running_statistics() {
        let tape = GradTape::<f64>::new();
        let x = tape.constant(Tensor::from_vec(&[1, 1, 1, 2], vec![1.0, 3.0]).unwrap());
        let gamma = tape.constant(Tensor::filled(&[1], 2.0));
        let beta = tape.constant(Tensor::filled(&[1], 0.5));
        let mut rm = Tensor::filled(&[1], 1.5);
        let mut rv = Tensor::filled(&[1], 4.0);
        let eps = 1e-5;
        let y = batchnorm(
            &tape,
            x,
            gamma,
            beta,
            &mut rm,
            &mut rv,
            Phase::Eval,
            eps,
            0.9,
        )
        .unwrap();
        let istd = 1.0 / (4.0f64 + eps).sqrt();
        let expect = [
            (1.0 - 1.5) * istd * 2.0 + 0.5,
            (3.0 - 1.5) * istd * 2.0 + 0.5,
        ];
        for (got, want) in tape.value(y).data().iter().zip(expect) {
            assert!((got - want).abs() < 1e-6, "{got} vs {want}");
        }
        // Eval must not touch the running buffers.
        assert_eq!(rm.data(), &[1.5]);
        assert_eq!(rv.data(), &[4.0]);
    }

    #[test]
    fn empty_batch_is_rejected() {
        let tape = GradTape::<f32>::new();
        let x = tape.constant(Tensor::zeros(&[0, 1, 2, 2]));
        let gamma = tape.constant(Tensor::ones(&[1]));
        let beta = tape.constant(Tensor::zeros(&[1]));
        let (mut rm, mut rv) = bn_state(1);
        let err = batchnorm(
            &tape,
            x,
            gamma,
            beta,
            &mut rm,
            &mut rv,
            Phase::Train,
            1e-5,
            0.9,
        )
        .unwrap_err();
        assert!(matches!(err, OpError::EmptyBatch));
    }

    #[test]
    fn train_mode_updates_running_statistics() {
        let tape = GradTape::<f32>::new();
        let x = tape.constant(Tensor::filled(&[1, 1, 2, 2], 2.0));
        let gamma = tape.constant(Tensor::ones(&[1]));
        let beta = tape.constant(Tensor::zeros(&[1]));
        let (mut rm, mut rv) = bn_state(1);
        batchnorm(
            &tape,
            x,
            gamma,
            beta,
            &mut rm,
            &mut rv,
            Phase::Train,
            1e-5,
            0.9,
        )
        .unwrap();
        // r_mean = 0.9 * 0 + 0.1 * 2 ; r_var = 0.9 * 1 + 0.1 * 0
        assert!((rm.data()[0] - 0.2).abs() < 1e-6);
        assert!((rv.data()[0] - 0.9).abs() < 1e-6);
    }
}
