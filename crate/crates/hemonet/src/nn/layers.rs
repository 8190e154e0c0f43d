//! Parameterized layer primitives over a [`ParamStore`].

use super::{BlockError, ForwardCtx, ParamId, ParamKind, ParamStore};
use crate::ops;
use crate::tape::Var;
use crate::tensor::{Element, Tensor};
use rand_chacha::ChaCha8Rng;

/// 2-d convolution layer; `groups > 1` gives grouped convolution.
#[derive(Debug, Clone)]
pub struct Conv2d {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub stride: usize,
    pub padding: usize,
    pub groups: usize,
}

impl Conv2d {
    #[allow(clippy::too_many_arguments)]
    pub fn init<E: Element>(
        store: &mut ParamStore<E>,
        name: &str,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        groups: usize,
        bias: bool,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let fan_in = (in_channels / groups) * kernel * kernel;
        let weight = store.add(
            format!("{name}.weight"),
            super::he_normal(
                &[out_channels, in_channels / groups, kernel, kernel],
                fan_in,
                rng,
            ),
            ParamKind::Weight,
        );
        let bias = bias.then(|| {
            store.add(
                format!("{name}.bias"),
                Tensor::zeros(&[out_channels]),
                ParamKind::Weight,
            )
        });
        Self {
            weight,
            bias,
            stride,
            padding,
            groups,
        }
    }

    pub fn forward<E: Element>(&self, ctx: &ForwardCtx<'_, E>, x: Var) -> Result<Var, BlockError> {
        Ok(ops::grouped_conv2d(
            ctx.tape,
            x,
            ctx.var(self.weight),
            self.bias.map(|b| ctx.var(b)),
            self.stride,
            self.padding,
            self.groups,
        )?)
    }
}

/// Fully connected layer.
#[derive(Debug, Clone)]
pub struct DenseLayer {
    pub weight: ParamId,
    pub bias: ParamId,
}

impl DenseLayer {
    pub fn init<E: Element>(
        store: &mut ParamStore<E>,
        name: &str,
        in_features: usize,
        out_features: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        Self {
            weight: store.add(
                format!("{name}.weight"),
                super::he_normal(&[out_features, in_features], in_features, rng),
                ParamKind::Weight,
            ),
            bias: store.add(
                format!("{name}.bias"),
                Tensor::zeros(&[out_features]),
                ParamKind::Weight,
            ),
        }
    }

    pub fn forward<E: Element>(&self, ctx: &ForwardCtx<'_, E>, x: Var) -> Result<Var, BlockError> {
        Ok(ops::dense(
            ctx.tape,
            x,
            ctx.var(self.weight),
            Some(ctx.var(self.bias)),
        )?)
    }
}

/// Batch normalization layer with running statistics held in the store.
#[derive(Debug, Clone)]
pub struct BatchNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub running_mean: ParamId,
    pub running_var: ParamId,
    pub epsilon: f64,
    pub momentum: f64,
}

/// Defaults recorded in the architecture config for reproducibility.
pub const BATCHNORM_EPSILON: f64 = 1e-5;
pub const BATCHNORM_MOMENTUM: f64 = 0.9;

impl BatchNorm {
    pub fn init<E: Element>(store: &mut ParamStore<E>, name: &str, channels: usize) -> Self {
        Self {
            gamma: store.add(
                format!("{name}.gamma"),
                Tensor::ones(&[channels]),
                ParamKind::Weight,
            ),
            beta: store.add(
                format!("{name}.beta"),
                Tensor::zeros(&[channels]),
                ParamKind::Weight,
            ),
            running_mean: store.add(
                format!("{name}.running_mean"),
                Tensor::zeros(&[channels]),
                ParamKind::RunningStat,
            ),
            running_var: store.add(
                format!("{name}.running_var"),
                Tensor::ones(&[channels]),
                ParamKind::RunningStat,
            ),
            epsilon: BATCHNORM_EPSILON,
            momentum: BATCHNORM_MOMENTUM,
        }
    }

    pub fn forward<E: Element>(
        &self,
        ctx: &ForwardCtx<'_, E>,
        store: &mut ParamStore<E>,
        x: Var,
    ) -> Result<Var, BlockError> {
        if store.is_frozen(self.running_mean) {
            // Frozen layers stop tracking batches; normalize with throwaway
            // copies so the stored statistics stay byte-identical.
            let mut mean = store.value(self.running_mean).clone();
            let mut var = store.value(self.running_var).clone();
            return Ok(ops::batchnorm(
                ctx.tape,
                x,
                ctx.var(self.gamma),
                ctx.var(self.beta),
                &mut mean,
                &mut var,
                ctx.phase,
                self.epsilon,
                self.momentum,
            )?);
        }
        let (mean, var) = store.pair_mut(self.running_mean, self.running_var);
        Ok(ops::batchnorm(
            ctx.tape,
            x,
            ctx.var(self.gamma),
            ctx.var(self.beta),
            mean,
            var,
            ctx.phase,
            self.epsilon,
            self.momentum,
        )?)
    }
}
