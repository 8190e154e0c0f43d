//! The block families networks are assembled from: plain convolution stacks,
//! pre-activation residual blocks (optionally grouped and/or gated), dense
//! connectivity blocks, and squeeze-and-excitation gates.

use super::{BatchNorm, BlockError, Conv2d, DenseLayer, ForwardCtx, ParamStore};
use crate::ops;
use crate::tape::Var;
use crate::tensor::{same_padding, Element};
use rand_chacha::ChaCha8Rng;

/// `n` consecutive 3x3 stride-1 convolutions, each followed by a ReLU.
/// Padding 0 walks the input extent down by 2 per layer; same padding
/// preserves it.
#[derive(Debug, Clone)]
pub struct VggStack {
    pub convs: Vec<Conv2d>,
}

impl VggStack {
    pub fn init<E: Element>(
        store: &mut ParamStore<E>,
        name: &str,
        in_channels: usize,
        out_channels: usize,
        n_convs: usize,
        padding: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        assert!(n_convs >= 1, "a convolution stack needs at least one layer");
        let convs = (0..n_convs)
            .map(|i| {
                let cin = if i == 0 { in_channels } else { out_channels };
                Conv2d::init(
                    store,
                    &format!("{name}.conv{i}"),
                    cin,
                    out_channels,
                    3,
                    1,
                    padding,
                    1,
                    true,
                    rng,
                )
            })
            .collect();
        Self { convs }
    }

    pub fn forward<E: Element>(&self, ctx: &ForwardCtx<'_, E>, x: Var) -> Result<Var, BlockError> {
        let mut h = x;
        for conv in &self.convs {
            h = conv.forward(ctx, h)?;
            h = ops::relu(ctx.tape, h);
        }
        Ok(h)
    }
}

/// Pre-activation residual block: `y = F(x) + shortcut(x)` where `F` applies
/// batchnorm -> relu -> conv twice. The shortcut is the identity when shapes
/// allow, otherwise a 1x1 projection convolution. A grouped middle
/// convolution gives the split-transform-merge variant, and an optional
/// squeeze-and-excitation gate rescales the branch before the addition.
#[derive(Debug, Clone)]
pub struct ResidualBlock {
    pub norm1: BatchNorm,
    pub conv1: Conv2d,
    pub norm2: BatchNorm,
    pub conv2: Conv2d,
    pub gate: Option<SeBlock>,
    pub projection: Option<Conv2d>,
}

impl ResidualBlock {
    #[allow(clippy::too_many_arguments)]
    pub fn init<E: Element>(
        store: &mut ParamStore<E>,
        name: &str,
        in_channels: usize,
        out_channels: usize,
        stride: usize,
        groups: usize,
        se_ratio: Option<usize>,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let norm1 = BatchNorm::init(store, &format!("{name}.norm1"), in_channels);
        let conv1 = Conv2d::init(
            store,
            &format!("{name}.conv1"),
            in_channels,
            out_channels,
            3,
            stride,
            same_padding(3),
            groups,
            false,
            rng,
        );
        let norm2 = BatchNorm::init(store, &format!("{name}.norm2"), out_channels);
        let conv2 = Conv2d::init(
            store,
            &format!("{name}.conv2"),
            out_channels,
            out_channels,
            3,
            1,
            same_padding(3),
            1,
            false,
            rng,
        );
        let gate =
            se_ratio.map(|r| SeBlock::init(store, &format!("{name}.se"), out_channels, r, rng));
        let projection = (in_channels != out_channels || stride != 1).then(|| {
            Conv2d::init(
                store,
                &format!("{name}.shortcut"),
                in_channels,
                out_channels,
                1,
                stride,
                0,
                1,
                false,
                rng,
            )
        });
        Self {
            norm1,
            conv1,
            norm2,
            conv2,
            gate,
            projection,
        }
    }

    pub fn forward<E: Element>(
        &self,
        ctx: &mut ForwardCtx<'_, E>,
        store: &mut ParamStore<E>,
        x: Var,
    ) -> Result<Var, BlockError> {
        let mut h = self.norm1.forward(ctx, store, x)?;
        h = ops::relu(ctx.tape, h);
        h = self.conv1.forward(ctx, h)?;
        h = self.norm2.forward(ctx, store, h)?;
        h = ops::relu(ctx.tape, h);
        h = self.conv2.forward(ctx, h)?;
        if let Some(gate) = &self.gate {
            h = gate.forward(ctx, h)?;
        }
        let shortcut = match &self.projection {
            Some(proj) => proj.forward(ctx, x)?,
            None => {
                let from = ctx.tape.value(x).shape().to_vec();
                let to = ctx.tape.value(h).shape().to_vec();
                if from != to {
                    return Err(BlockError::ShortcutShapeMismatch { from, to });
                }
                x
            }
        };
        Ok(ops::add(ctx.tape, h, shortcut)?)
    }
}

/// Dense connectivity: each internal layer consumes the concatenation of the
/// block input and every previous layer's features and appends `growth`
/// channels; the block output is the full concatenation.
///
/// A block with `slots` concatenation slots runs `slots - 1` internal layers,
/// so the output width is `input_channels + (slots - 1) * growth`. With
/// `slots == 1` the block is a no-op.
#[derive(Debug, Clone)]
pub struct DenseBlock {
    pub layers: Vec<(BatchNorm, Conv2d)>,
    pub growth: usize,
}

impl DenseBlock {
    pub fn init<E: Element>(
        store: &mut ParamStore<E>,
        name: &str,
        in_channels: usize,
        slots: usize,
        growth: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        assert!(slots >= 1, "a dense block needs at least the input slot");
        let layers = (0..slots.saturating_sub(1))
            .map(|j| {
                let width = in_channels + j * growth;
                let norm = BatchNorm::init(store, &format!("{name}.layer{j}.norm"), width);
                let conv = Conv2d::init(
                    store,
                    &format!("{name}.layer{j}.conv"),
                    width,
                    growth,
                    3,
                    1,
                    same_padding(3),
                    1,
                    false,
                    rng,
                );
                (norm, conv)
            })
            .collect();
        Self { layers, growth }
    }

    pub fn forward<E: Element>(
        &self,
        ctx: &mut ForwardCtx<'_, E>,
        store: &mut ParamStore<E>,
        x: Var,
    ) -> Result<Var, BlockError> {
        let mut state = x;
        for (norm, conv) in &self.layers {
            let mut h = norm.forward(ctx, store, state)?;
            h = ops::relu(ctx.tape, h);
            h = conv.forward(ctx, h)?;
            state = ops::concat_channels(ctx.tape, &[state, h])?;
        }
        Ok(state)
    }

    /// Output channel count for a given input width.
    pub fn out_channels(&self, in_channels: usize) -> usize {
        in_channels + self.layers.len() * self.growth
    }
}

/// Squeeze-and-excitation gate: global average pooling squeezes each channel
/// to one value, two dense layers with a bottleneck of `max(1, C / ratio)`
/// produce a sigmoid gate in (0, 1), and the input is rescaled per channel.
#[derive(Debug, Clone)]
pub struct SeBlock {
    pub squeeze: DenseLayer,
    pub restore: DenseLayer,
}

impl SeBlock {
    pub fn init<E: Element>(
        store: &mut ParamStore<E>,
        name: &str,
        channels: usize,
        ratio: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let width = (channels / ratio.max(1)).max(1);
        Self {
            squeeze: DenseLayer::init(store, &format!("{name}.squeeze"), channels, width, rng),
            restore: DenseLayer::init(store, &format!("{name}.restore"), width, channels, rng),
        }
    }

    pub fn forward<E: Element>(&self, ctx: &ForwardCtx<'_, E>, x: Var) -> Result<Var, BlockError> {
        let pooled = ops::global_avg_pool(ctx.tape, x)?;
        let mut gate = self.squeeze.forward(ctx, pooled)?;
        gate = ops::relu(ctx.tape, gate);
        gate = self.restore.forward(ctx, gate)?;
        gate = ops::sigmoid(ctx.tape, gate);
        Ok(ops::scale_channels(ctx.tape, x, gate)?)
    }
}
