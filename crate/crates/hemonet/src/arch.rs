//! Declarative network construction: a configuration names one of the five
//! block families and its stage layout, and [`build_model`] instantiates the
//! parameters deterministically from a seed, recording a static shape trace
//! as it goes.

use crate::nn::{
    BatchNorm, BlockError, Conv2d, DenseBlock, DenseLayer, ForwardCtx, ParamStore, ResidualBlock,
    VggStack,
};
use crate::ops;
use crate::tape::{GradTape, Var};
use crate::tensor::{conv_output_size, same_padding, ConvSpec, ShapeError, Tensor};
use crate::Phase;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("class count must be at least 2, got {0}")]
    ClassCount(usize),
    #[error("architecture has no stages")]
    NoStages,
    #[error("stage `{stage}` produces an invalid shape: {source}")]
    InvalidStage {
        stage: String,
        #[source]
        source: ShapeError,
    },
    #[error("stage `{stage}`: channels {channels} not divisible by cardinality {groups}")]
    CardinalityMismatch {
        stage: String,
        channels: usize,
        groups: usize,
    },
    #[error("batch shape {got:?} does not match configured input {expected:?}")]
    BatchShape {
        expected: Vec<usize>,
        got: Vec<usize>,
    },
    #[error(transparent)]
    Block(#[from] BlockError),
}

/// One stage of convolution stacks (plain family).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VggStage {
    pub convs: usize,
    pub channels: usize,
}

/// One stage of residual blocks.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResStage {
    pub blocks: usize,
    pub channels: usize,
}

/// One dense-connectivity stage: `slots - 1` layers each adding `growth`
/// channels.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DenseStage {
    pub slots: usize,
    pub growth: usize,
}

/// Family-specific stage layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum FamilyConfig {
    /// Stacked small convolutions with max-pool downsampling.
    Vgg {
        stages: Vec<VggStage>,
        /// Same padding preserves extents; without it every 3x3 convolution
        /// shaves one pixel per side.
        same_padding: bool,
    },
    /// Pre-activation residual blocks.
    ResnetV2 {
        stem_channels: usize,
        stages: Vec<ResStage>,
    },
    /// Residual blocks with squeeze-and-excitation gates.
    SeResnet {
        stem_channels: usize,
        stages: Vec<ResStage>,
        se_ratio: usize,
    },
    /// Residual blocks with grouped 3x3 convolutions.
    Resnext {
        stem_channels: usize,
        stages: Vec<ResStage>,
        cardinality: usize,
    },
    /// Dense-connectivity blocks with compressing transitions.
    Densenet {
        stem_channels: usize,
        stages: Vec<DenseStage>,
    },
}

impl FamilyConfig {
    pub fn family_name(&self) -> &'static str {
        match self {
            FamilyConfig::Vgg { .. } => "vgg",
            FamilyConfig::ResnetV2 { .. } => "resnet_v2",
            FamilyConfig::SeResnet { .. } => "se_resnet",
            FamilyConfig::Resnext { .. } => "resnext",
            FamilyConfig::Densenet { .. } => "densenet",
        }
    }
}

/// Complete description of a network: family layout, input geometry, class
/// count, and the shared classification head (dense reduction, dropout,
/// dense to class logits, softmax).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArchitectureConfig {
    pub name: String,
    #[serde(flatten)]
    pub family: FamilyConfig,
    /// `[C, H, W]` per image.
    pub input_shape: [usize; 3],
    pub classes: usize,
    pub head_width: usize,
    pub dropout: f64,
}

/// Layer label and its per-image output shape `[C, H, W]`.
pub type TraceEntry = (String, [usize; 3]);

#[derive(Debug)]
enum Body {
    Vgg {
        stacks: Vec<VggStack>,
    },
    Residual {
        stem: Conv2d,
        blocks: Vec<ResidualBlock>,
        final_norm: BatchNorm,
    },
    Dense {
        stem: Conv2d,
        blocks: Vec<DenseBlock>,
        transitions: Vec<(BatchNorm, Conv2d)>,
        final_norm: BatchNorm,
    },
}

/// A built network: configuration, named parameters, and the layer graph.
#[derive(Debug)]
pub struct Model {
    pub config: ArchitectureConfig,
    pub store: ParamStore<f32>,
    body: Body,
    head_reduce: DenseLayer,
    head_classify: DenseLayer,
    shape_trace: Vec<TraceEntry>,
}

/// Extent after a square convolution, attributed to a named stage on error.
fn traced_extent(
    stage: &str,
    input: usize,
    kernel: usize,
    stride: usize,
    padding: usize,
) -> Result<usize, ModelError> {
    conv_output_size(ConvSpec::new(input, kernel, stride, padding)).map_err(|source| {
        ModelError::InvalidStage {
            stage: stage.to_string(),
            source,
        }
    })
}

/// Instantiates every parameter of the configured architecture. The same
/// `(config, seed)` pair always produces bit-identical parameters.
pub fn build_model(config: &ArchitectureConfig, seed: u64) -> Result<Model, ModelError> {
    if config.classes < 2 {
        return Err(ModelError::ClassCount(config.classes));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    let mut trace: Vec<TraceEntry> = Vec::new();
    let [in_c, in_h, in_w] = config.input_shape;
    let (mut h, mut w) = (in_h, in_w);

    let body = match &config.family {
        FamilyConfig::Vgg {
            stages,
            same_padding: same,
        } => {
            if stages.is_empty() {
                return Err(ModelError::NoStages);
            }
            let pad = if *same { same_padding(3) } else { 0 };
            let mut stacks = Vec::new();
            let mut channels = in_c;
            for (si, stage) in stages.iter().enumerate() {
                let name = format!("stage{si}");
                for ci in 0..stage.convs {
                    let label = format!("{name}.conv{ci}");
                    h = traced_extent(&label, h, 3, 1, pad)?;
                    w = traced_extent(&label, w, 3, 1, pad)?;
                    trace.push((label, [stage.channels, h, w]));
                }
                stacks.push(VggStack::init(
                    &mut store,
                    &name,
                    channels,
                    stage.channels,
                    stage.convs,
                    pad,
                    &mut rng,
                ));
                channels = stage.channels;
                let label = format!("{name}.pool");
                h = traced_extent(&label, h, 2, 2, 0)?;
                w = traced_extent(&label, w, 2, 2, 0)?;
                trace.push((label, [channels, h, w]));
            }
            Body::Vgg { stacks }
        }
        FamilyConfig::ResnetV2 {
            stem_channels,
            stages,
        } => build_residual(
            &mut store,
            &mut rng,
            &mut trace,
            &mut h,
            &mut w,
            in_c,
            *stem_channels,
            stages,
            1,
            None,
        )?,
        FamilyConfig::SeResnet {
            stem_channels,
            stages,
            se_ratio,
        } => build_residual(
            &mut store,
            &mut rng,
            &mut trace,
            &mut h,
            &mut w,
            in_c,
            *stem_channels,
            stages,
            1,
            Some(*se_ratio),
        )?,
        FamilyConfig::Resnext {
            stem_channels,
            stages,
            cardinality,
        } => build_residual(
            &mut store,
            &mut rng,
            &mut trace,
            &mut h,
            &mut w,
            in_c,
            *stem_channels,
            stages,
            *cardinality,
            None,
        )?,
        FamilyConfig::Densenet {
            stem_channels,
            stages,
        } => {
            if stages.is_empty() {
                return Err(ModelError::NoStages);
            }
            let stem = Conv2d::init(
                &mut store,
                "stem",
                in_c,
                *stem_channels,
                3,
                1,
                same_padding(3),
                1,
                false,
                &mut rng,
            );
            let mut channels = *stem_channels;
            trace.push(("stem".into(), [channels, h, w]));
            let mut blocks = Vec::new();
            let mut transitions = Vec::new();
            for (si, stage) in stages.iter().enumerate() {
                let name = format!("block{si}");
                let block = DenseBlock::init(
                    &mut store,
                    &name,
                    channels,
                    stage.slots,
                    stage.growth,
                    &mut rng,
                );
                channels = block.out_channels(channels);
                trace.push((name, [channels, h, w]));
                blocks.push(block);
                if si + 1 < stages.len() {
                    // Transition: compress to half the channels at stride 2.
                    let tname = format!("transition{si}");
                    let norm = BatchNorm::init(&mut store, &format!("{tname}.norm"), channels);
                    let compressed = (channels / 2).max(1);
                    let conv = Conv2d::init(
                        &mut store,
                        &format!("{tname}.conv"),
                        channels,
                        compressed,
                        1,
                        2,
                        0,
                        1,
                        false,
                        &mut rng,
                    );
                    h = traced_extent(&tname, h, 1, 2, 0)?;
                    w = traced_extent(&tname, w, 1, 2, 0)?;
                    channels = compressed;
                    trace.push((tname, [channels, h, w]));
                    transitions.push((norm, conv));
                }
            }
            let final_norm = BatchNorm::init(&mut store, "final_norm", channels);
            Body::Dense {
                stem,
                blocks,
                transitions,
                final_norm,
            }
        }
    };

    let features = trace.last().map(|(_, s)| s[0]).unwrap_or(in_c);
    let head_reduce = DenseLayer::init(
        &mut store,
        "head.reduce",
        features,
        config.head_width,
        &mut rng,
    );
    let head_classify = DenseLayer::init(
        &mut store,
        "head.classify",
        config.head_width,
        config.classes,
        &mut rng,
    );
    trace.push(("head.reduce".into(), [config.head_width, 1, 1]));
    trace.push(("head.classify".into(), [config.classes, 1, 1]));

    Ok(Model {
        config: config.clone(),
        store,
        body,
        head_reduce,
        head_classify,
        shape_trace: trace,
    })
}

#[allow(clippy::too_many_arguments)]
fn build_residual(
    store: &mut ParamStore<f32>,
    rng: &mut ChaCha8Rng,
    trace: &mut Vec<TraceEntry>,
    h: &mut usize,
    w: &mut usize,
    in_c: usize,
    stem_channels: usize,
    stages: &[ResStage],
    cardinality: usize,
    se_ratio: Option<usize>,
) -> Result<Body, ModelError> {
    if stages.is_empty() {
        return Err(ModelError::NoStages);
    }
    let stem = Conv2d::init(
        store,
        "stem",
        in_c,
        stem_channels,
        3,
        1,
        same_padding(3),
        1,
        false,
        rng,
    );
    let mut channels = stem_channels;
    trace.push(("stem".into(), [channels, *h, *w]));
    let mut blocks = Vec::new();
    for (si, stage) in stages.iter().enumerate() {
        if stage.channels % cardinality != 0 {
            return Err(ModelError::CardinalityMismatch {
                stage: format!("stage{si}"),
                channels: stage.channels,
                groups: cardinality,
            });
        }
        for bi in 0..stage.blocks {
            // The first block of every stage past the first downsamples.
            let stride = if bi == 0 && si > 0 { 2 } else { 1 };
            let name = format!("stage{si}.block{bi}");
            // A grouped first conv also needs the incoming width to split.
            let groups = if cardinality > 1 && channels.is_multiple_of(cardinality) {
                cardinality
            } else {
                1
            };
            blocks.push(ResidualBlock::init(
                store,
                &name,
                channels,
                stage.channels,
                stride,
                groups,
                se_ratio,
                rng,
            ));
            *h = traced_extent(&name, *h, 3, stride, same_padding(3))?;
            *w = traced_extent(&name, *w, 3, stride, same_padding(3))?;
            channels = stage.channels;
            trace.push((name, [channels, *h, *w]));
        }
    }
    let final_norm = BatchNorm::init(store, "final_norm", channels);
    Ok(Body::Residual {
        stem,
        blocks,
        final_norm,
    })
}

impl Model {
    /// Per-layer `[C, H, W]` output shapes computed at build time.
    pub fn shape_trace(&self) -> &[TraceEntry] {
        &self.shape_trace
    }

    /// Total scalar parameter count across all named tensors, running
    /// statistics included.
    pub fn count_parameters(&self) -> usize {
        self.store.num_scalars()
    }

    /// Runs the network on an already bound context, returning the
    /// probability variable.
    pub fn forward_vars(
        &mut self,
        ctx: &mut ForwardCtx<'_, f32>,
        batch: Var,
    ) -> Result<Var, ModelError> {
        {
            let got = ctx.tape.value(batch).shape().to_vec();
            let [c, h, w] = self.config.input_shape;
            if got.len() != 4 || got[1..] != [c, h, w] {
                return Err(ModelError::BatchShape {
                    expected: vec![c, h, w],
                    got,
                });
            }
        }
        let store = &mut self.store;
        let mut x = batch;
        match &self.body {
            Body::Vgg { stacks } => {
                for stack in stacks {
                    x = stack.forward(ctx, x)?;
                    x = ops::pool2d(ctx.tape, x, 2, 2, ops::PoolMode::Max)
                        .map_err(BlockError::from)?;
                }
            }
            Body::Residual {
                stem,
                blocks,
                final_norm,
            } => {
                x = stem.forward(ctx, x)?;
                for block in blocks {
                    x = block.forward(ctx, store, x)?;
                }
                x = final_norm.forward(ctx, store, x)?;
                x = ops::relu(ctx.tape, x);
            }
            Body::Dense {
                stem,
                blocks,
                transitions,
                final_norm,
            } => {
                x = stem.forward(ctx, x)?;
                for (bi, block) in blocks.iter().enumerate() {
                    x = block.forward(ctx, store, x)?;
                    if let Some((norm, conv)) = transitions.get(bi) {
                        x = norm.forward(ctx, store, x)?;
                        x = ops::relu(ctx.tape, x);
                        x = conv.forward(ctx, x)?;
                    }
                }
                x = final_norm.forward(ctx, store, x)?;
                x = ops::relu(ctx.tape, x);
            }
        }
        x = ops::global_avg_pool(ctx.tape, x).map_err(BlockError::from)?;
        x = self.head_reduce.forward(ctx, x)?;
        let seed = ctx.next_dropout_seed();
        x = ops::dropout(ctx.tape, x, self.config.dropout, ctx.phase, seed)
            .map_err(BlockError::from)?;
        x = self.head_classify.forward(ctx, x)?;
        Ok(ops::softmax(ctx.tape, x).map_err(BlockError::from)?)
    }

    /// Convenience forward pass on a fresh tape, returning `[N, K]` class
    /// probabilities.
    pub fn forward(
        &mut self,
        batch: &Tensor<f32>,
        phase: Phase,
        dropout_seed: u64,
    ) -> Result<Tensor<f32>, ModelError> {
        let tape = GradTape::new();
        let mut ctx = ForwardCtx::bind(&tape, &self.store, phase, dropout_seed, false);
        let b = tape.constant(batch.clone());
        let probs = self.forward_vars(&mut ctx, b)?;
        Ok(tape.value_cloned(probs))
    }
}

/// Built-in architecture presets.
pub mod presets {
    use super::*;

    fn mini(name: &str, family: FamilyConfig, classes: usize) -> ArchitectureConfig {
        ArchitectureConfig {
            name: name.to_string(),
            family,
            input_shape: [3, 32, 32],
            classes,
            head_width: 32,
            dropout: 0.1,
        }
    }

    /// Desk-scale plain convolution stack.
    pub fn vgg_mini(classes: usize) -> ArchitectureConfig {
        mini(
            "vgg_mini",
            FamilyConfig::Vgg {
                stages: vec![
                    VggStage {
                        convs: 2,
                        channels: 8,
                    },
                    VggStage {
                        convs: 2,
                        channels: 16,
                    },
                    VggStage {
                        convs: 2,
                        channels: 32,
                    },
                ],
                same_padding: true,
            },
            classes,
        )
    }

    /// Desk-scale pre-activation residual network.
    pub fn resnet_mini(classes: usize) -> ArchitectureConfig {
        mini(
            "resnet_mini",
            FamilyConfig::ResnetV2 {
                stem_channels: 8,
                stages: vec![
                    ResStage {
                        blocks: 1,
                        channels: 16,
                    },
                    ResStage {
                        blocks: 1,
                        channels: 32,
                    },
                ],
            },
            classes,
        )
    }

    /// Desk-scale gated residual network.
    pub fn se_resnet_mini(classes: usize) -> ArchitectureConfig {
        mini(
            "se_resnet_mini",
            FamilyConfig::SeResnet {
                stem_channels: 8,
                stages: vec![
                    ResStage {
                        blocks: 1,
                        channels: 16,
                    },
                    ResStage {
                        blocks: 1,
                        channels: 32,
                    },
                ],
                se_ratio: 4,
            },
            classes,
        )
    }

    /// Desk-scale grouped-convolution residual network.
    pub fn resnext_mini(classes: usize) -> ArchitectureConfig {
        mini(
            "resnext_mini",
            FamilyConfig::Resnext {
                stem_channels: 8,
                stages: vec![
                    ResStage {
                        blocks: 1,
                        channels: 16,
                    },
                    ResStage {
                        blocks: 1,
                        channels: 32,
                    },
                ],
                cardinality: 4,
            },
            classes,
        )
    }

    /// Desk-scale dense-connectivity network.
    pub fn densenet_mini(classes: usize) -> ArchitectureConfig {
        mini(
            "densenet_mini",
            FamilyConfig::Densenet {
                stem_channels: 16,
                stages: vec![
                    DenseStage {
                        slots: 5,
                        growth: 12,
                    },
                    DenseStage {
                        slots: 5,
                        growth: 12,
                    },
                ],
            },
            classes,
        )
    }

    /// Full-profile dense network: 224x224 input, growth 48, whose final
    /// feature width is 2208, reduced to 128 by the head.
    pub fn densenet_full(classes: usize) -> ArchitectureConfig {
        ArchitectureConfig {
            name: "densenet_full".to_string(),
            family: FamilyConfig::Densenet {
                stem_channels: 96,
                stages: vec![
                    DenseStage {
                        slots: 7,
                        growth: 48,
                    },
                    DenseStage {
                        slots: 13,
                        growth: 48,
                    },
                    DenseStage {
                        slots: 37,
                        growth: 48,
                    },
                    DenseStage {
                        slots: 25,
                        growth: 48,
                    },
                ],
            },
            input_shape: [3, 224, 224],
            classes,
            head_width: 128,
            dropout: 0.1,
        }
    }

    /// Full-profile 19-layer plain stack (16 convolutions plus the head).
    pub fn vgg19_full(classes: usize) -> ArchitectureConfig {
        ArchitectureConfig {
            name: "vgg19_full".to_string(),
            family: FamilyConfig::Vgg {
                stages: vec![
                    VggStage {
                        convs: 2,
                        channels: 64,
                    },
                    VggStage {
                        convs: 2,
                        channels: 128,
                    },
                    VggStage {
                        convs: 4,
                        channels: 256,
                    },
                    VggStage {
                        convs: 4,
                        channels: 512,
                    },
                    VggStage {
                        convs: 4,
                        channels: 512,
                    },
                ],
                same_padding: true,
            },
            input_shape: [3, 224, 224],
            classes,
            head_width: 128,
            dropout: 0.1,
        }
    }

    /// Looks up a preset by name.
    pub fn by_name(name: &str, classes: usize) -> Option<ArchitectureConfig> {
        match name {
            "vgg_mini" => Some(vgg_mini(classes)),
            "resnet_mini" => Some(resnet_mini(classes)),
            "se_resnet_mini" => Some(se_resnet_mini(classes)),
            "resnext_mini" => Some(resnext_mini(classes)),
            "densenet_mini" => Some(densenet_mini(classes)),
            "densenet_full" => Some(densenet_full(classes)),
            "vgg19_full" => Some(vgg19_full(classes)),
            _ => None,
        }
    }

    /// The five desk-scale presets, one per family.
    pub fn mini_names() -> [&'static str; 5] {
        [
            "vgg_mini",
            "resnet_mini",
            "se_resnet_mini",
            "resnext_mini",
            "densenet_mini",
        ]
    }
}
