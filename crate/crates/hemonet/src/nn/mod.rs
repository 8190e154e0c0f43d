//! Neural-network building blocks: a central parameter store, layer
//! primitives, and the block families the architectures are assembled from.

mod blocks;
mod layers;

pub use blocks::{DenseBlock, ResidualBlock, SeBlock, VggStack};
pub use layers::{BatchNorm, Conv2d, DenseLayer};

use crate::ops::OpError;
use crate::tape::{GradTape, Var};
use crate::tensor::{Element, ShapeError, Tensor};
use crate::Phase;
use rand::SeedableRng;
pub use rand_chacha::ChaCha8Rng;
use thiserror::Error;

/// The crate's standard seeded RNG, used for every parameter initialization.
pub fn seeded_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

#[derive(Debug, Error)]
pub enum BlockError {
    #[error(transparent)]
    Op(#[from] OpError),
    #[error(transparent)]
    Shape(#[from] ShapeError),
    #[error("identity shortcut cannot bridge {from:?} -> {to:?}; configure a projection shortcut")]
    ShortcutShapeMismatch { from: Vec<usize>, to: Vec<usize> },
}

/// What a stored tensor is: a trainable weight or a running statistic that is
/// updated by forward passes rather than by the optimizer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamKind {
    Weight,
    RunningStat,
}

/// Handle into a [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    /// Position of the parameter in registration order; also its slot in the
    /// binding list accepted by [`ForwardCtx::with_bindings`].
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
pub struct ParamEntry<E: Element> {
    pub name: String,
    pub value: Tensor<E>,
    pub kind: ParamKind,
    /// Frozen entries keep their values through training: weights receive no
    /// optimizer updates and running statistics stop tracking batches.
    pub frozen: bool,
}

impl<E: Element> ParamEntry<E> {
    /// Whether the optimizer may update this entry.
    pub fn trainable(&self) -> bool {
        self.kind == ParamKind::Weight && !self.frozen
    }
}

/// Ordered, uniquely named parameter tensors for one model.
#[derive(Debug, Clone, Default)]
pub struct ParamStore<E: Element = f32> {
    entries: Vec<ParamEntry<E>>,
}

impl<E: Element> ParamStore<E> {
    pub fn new() -> Self {
        Self {
            entries: Vec::new(),
        }
    }

    /// Registers a tensor under a unique name.
    ///
    /// # Panics
    /// Panics when the name is already taken; parameter names are assigned
    /// by the model builder and must be unique.
    pub fn add(&mut self, name: impl Into<String>, value: Tensor<E>, kind: ParamKind) -> ParamId {
        let name = name.into();
        assert!(
            self.entries.iter().all(|e| e.name != name),
            "duplicate parameter name {name}"
        );
        self.entries.push(ParamEntry {
            name,
            value,
            kind,
            frozen: false,
        });
        ParamId(self.entries.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn value(&self, id: ParamId) -> &Tensor<E> {
        &self.entries[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor<E> {
        &mut self.entries[id.0].value
    }

    /// Mutable access to two distinct entries at once (e.g. a normalization
    /// layer's running mean and variance).
    pub fn pair_mut(&mut self, a: ParamId, b: ParamId) -> (&mut Tensor<E>, &mut Tensor<E>) {
        assert_ne!(a.0, b.0);
        if a.0 < b.0 {
            let (lo, hi) = self.entries.split_at_mut(b.0);
            (&mut lo[a.0].value, &mut hi[0].value)
        } else {
            let (lo, hi) = self.entries.split_at_mut(a.0);
            (&mut hi[0].value, &mut lo[b.0].value)
        }
    }

    pub fn entries(&self) -> &[ParamEntry<E>] {
        &self.entries
    }

    pub fn entries_mut(&mut self) -> &mut [ParamEntry<E>] {
        &mut self.entries
    }

    pub fn id_of(&self, name: &str) -> Option<ParamId> {
        self.entries
            .iter()
            .position(|e| e.name == name)
            .map(ParamId)
    }

    /// Whether an entry is excluded from training updates.
    pub fn is_frozen(&self, id: ParamId) -> bool {
        self.entries[id.0].frozen
    }

    /// Ids in registration order, paired with their entries.
    pub fn iter_ids(&self) -> impl Iterator<Item = (ParamId, &ParamEntry<E>)> + '_ {
        self.entries
            .iter()
            .enumerate()
            .map(|(i, e)| (ParamId(i), e))
    }

    /// Total count of stored scalars, running statistics included.
    pub fn num_scalars(&self) -> usize {
        self.entries.iter().map(|e| e.value.len()).sum()
    }

    /// Converts every entry to another element type.
    pub fn cast<T: Element>(&self) -> ParamStore<T> {
        ParamStore {
            entries: self
                .entries
                .iter()
                .map(|e| ParamEntry {
                    name: e.name.clone(),
                    value: e.value.cast(),
                    kind: e.kind,
                    frozen: e.frozen,
                })
                .collect(),
        }
    }
}

/// One forward pass: the tape, the bound parameter variables, the phase, and
/// a deterministic stream of dropout seeds.
pub struct ForwardCtx<'t, E: Element> {
    pub tape: &'t GradTape<E>,
    pub phase: Phase,
    vars: Vec<Option<Var>>,
    dropout_seed: u64,
    dropout_calls: u64,
}

impl<'t, E: Element> ForwardCtx<'t, E> {
    /// Binds every weight in the store onto the tape. Gradients are requested
    /// for trainable weights only when `with_grads` is set; running statistics
    /// are never bound (they are plain state, not differentiable inputs).
    pub fn bind(
        tape: &'t GradTape<E>,
        store: &ParamStore<E>,
        phase: Phase,
        dropout_seed: u64,
        with_grads: bool,
    ) -> Self {
        let vars = store
            .entries
            .iter()
            .map(|e| match e.kind {
                ParamKind::Weight => Some(tape.leaf(e.value.clone(), with_grads && e.trainable())),
                ParamKind::RunningStat => None,
            })
            .collect();
        Self {
            tape,
            phase,
            vars,
            dropout_seed,
            dropout_calls: 0,
        }
    }

    /// Builds a context from externally created variables, indexed by
    /// [`ParamId`] order with `None` for running statistics. Used when the
    /// parameter leaves are owned by someone else, e.g. a gradient checker.
    pub fn with_bindings(
        tape: &'t GradTape<E>,
        phase: Phase,
        dropout_seed: u64,
        bindings: Vec<Option<Var>>,
    ) -> Self {
        Self {
            tape,
            phase,
            vars: bindings,
            dropout_seed,
            dropout_calls: 0,
        }
    }

    /// Tape variable of a bound weight.
    pub fn var(&self, id: ParamId) -> Var {
        self.vars[id.0].expect("running statistics are not bound as variables")
    }

    /// Bound variables paired with store ids, for gradient harvesting.
    pub fn bound(&self) -> impl Iterator<Item = (ParamId, Var)> + '_ {
        self.vars
            .iter()
            .enumerate()
            .filter_map(|(i, v)| v.map(|var| (ParamId(i), var)))
    }

    pub fn next_dropout_seed(&mut self) -> u64 {
        self.dropout_calls += 1;
        crate::mix_seed(self.dropout_seed, &[self.dropout_calls])
    }
}

/// Standard normal sample via Box-Muller, driven by the given RNG.
pub(crate) fn standard_normal(rng: &mut ChaCha8Rng) -> f64 {
    use rand::Rng;
    let u1: f64 = rng.random::<f64>().max(1e-300);
    let u2: f64 = rng.random();
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

/// He-style initialization: zero-mean normal with variance `2 / fan_in`.
pub fn he_normal<E: Element>(shape: &[usize], fan_in: usize, rng: &mut ChaCha8Rng) -> Tensor<E> {
    let std = (2.0 / fan_in.max(1) as f64).sqrt();
    let len: usize = shape.iter().product();
    let data = (0..len)
        .map(|_| E::from_f64(standard_normal(rng) * std))
        .collect();
    Tensor::from_vec(shape, data).expect("shape/product agree")
}

/// Receptive field of a stack of layers described by `(kernel, stride)`
/// pairs: `1 + sum((k_i - 1) * prod(strides before layer i))`.
pub fn receptive_field(stack: &[(usize, usize)]) -> usize {
    let mut field = 1usize;
    let mut jump = 1usize;
    for &(kernel, stride) in stack {
        field += (kernel - 1) * jump;
        jump *= stride;
    }
    field
}
