//! Reverse-mode automatic differentiation over a gradient tape.
//!
//! Operations append nodes to a [`GradTape`] in execution order, which is a
//! topological order by construction: a node's inputs always precede it.
//! [`GradTape::backward`] walks the tape in reverse from a scalar root,
//! propagating gradients through each node's recorded backward closure and
//! accumulating the results into the gradient buffers of leaf variables
//! created with `requires_grad = true`.
//!
//! A tape is confined to one logical thread; tensors themselves are plain
//! values and can move freely between threads, so independent tapes may be
//! evaluated concurrently.

use crate::tensor::{Element, Tensor};
use std::cell::{Ref, RefCell};
use thiserror::Error;

/// Handle to a value recorded on a [`GradTape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(pub(crate) usize);

#[derive(Debug, Error, PartialEq, Eq)]
pub enum TapeError {
    #[error("backward root must be a scalar, got {len} elements")]
    NonScalarRoot { len: usize },
}

/// Gradient contributions flowing to parent variables.
pub(crate) type Contributions<E> = Vec<(Var, Tensor<E>)>;

type BackwardFn<E> = Box<dyn Fn(&Tensor<E>) -> Contributions<E>>;

enum NodeKind<E: Element> {
    Leaf { requires_grad: bool },
    Op { backward: BackwardFn<E> },
}

struct Node<E: Element> {
    value: Tensor<E>,
    kind: NodeKind<E>,
    // True when this node's value influences some differentiable leaf.
    needs_grad: bool,
    grad: Option<Tensor<E>>,
}

/// Ordered record of executed differentiable operations.
pub struct GradTape<E: Element = f32> {
    nodes: RefCell<Vec<Node<E>>>,
}

impl<E: Element> Default for GradTape<E> {
    fn default() -> Self {
        Self::new()
    }
}

impl<E: Element> GradTape<E> {
    pub fn new() -> Self {
        Self {
            nodes: RefCell::new(Vec::new()),
        }
    }

    /// Records an input tensor. Gradients are accumulated for it during
    /// [`backward`](Self::backward) only when `requires_grad` is true.
    pub fn leaf(&self, value: Tensor<E>, requires_grad: bool) -> Var {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value,
            kind: NodeKind::Leaf { requires_grad },
            needs_grad: requires_grad,
            grad: None,
        });
        Var(nodes.len() - 1)
    }

    /// Records a tensor that never receives gradients.
    pub fn constant(&self, value: Tensor<E>) -> Var {
        self.leaf(value, false)
    }

    /// Records an operation result together with its backward closure.
    /// `parents` lists every differentiable input.
    pub(crate) fn push_op(
        &self,
        value: Tensor<E>,
        parents: &[Var],
        backward: impl Fn(&Tensor<E>) -> Contributions<E> + 'static,
    ) -> Var {
        let mut nodes = self.nodes.borrow_mut();
        let needs_grad = parents.iter().any(|p| nodes[p.0].needs_grad);
        nodes.push(Node {
            value,
            kind: NodeKind::Op {
                backward: Box::new(backward),
            },
            needs_grad,
            grad: None,
        });
        Var(nodes.len() - 1)
    }

    /// Borrowed view of a recorded value. The borrow must be released before
    /// recording further operations.
    pub fn value(&self, var: Var) -> Ref<'_, Tensor<E>> {
        Ref::map(self.nodes.borrow(), |nodes| &nodes[var.0].value)
    }

    /// Clone of a recorded value.
    pub fn value_cloned(&self, var: Var) -> Tensor<E> {
        self.nodes.borrow()[var.0].value.clone()
    }

    /// Whether gradients will flow through this variable.
    pub fn needs_grad(&self, var: Var) -> bool {
        self.nodes.borrow()[var.0].needs_grad
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.borrow().is_empty()
    }

    /// Propagates gradients from a scalar root back to every differentiable
    /// leaf. Repeated calls accumulate into the leaf gradient buffers.
    pub fn backward(&self, root: Var) -> Result<(), TapeError> {
        let mut nodes = self.nodes.borrow_mut();
        let root_len = nodes[root.0].value.len();
        if root_len != 1 {
            return Err(TapeError::NonScalarRoot { len: root_len });
        }

        let mut scratch: Vec<Option<Tensor<E>>> = (0..nodes.len()).map(|_| None).collect();
        scratch[root.0] = Some(Tensor::ones(nodes[root.0].value.shape()));

        for i in (0..=root.0).rev() {
            let Some(grad) = scratch[i].take() else {
                continue;
            };
            match &nodes[i].kind {
                NodeKind::Leaf { requires_grad } => {
                    if *requires_grad {
                        match &mut nodes[i].grad {
                            Some(acc) => acc.add_assign(&grad),
                            slot @ None => *slot = Some(grad),
                        }
                    }
                }
                NodeKind::Op { backward } => {
                    for (parent, contribution) in backward(&grad) {
                        debug_assert!(parent.0 < i, "tape out of topological order");
                        if !nodes[parent.0].needs_grad {
                            continue;
                        }
                        match &mut scratch[parent.0] {
                            Some(acc) => acc.add_assign(&contribution),
                            slot @ None => *slot = Some(contribution),
                        }
                    }
                }
            }
        }
        Ok(())
    }

    /// Accumulated gradient of a leaf, if any backward pass reached it.
    pub fn grad(&self, var: Var) -> Option<Tensor<E>> {
        self.nodes.borrow()[var.0].grad.clone()
    }

    /// Clears all accumulated leaf gradients.
    pub fn zero_grad(&self) {
        for node in self.nodes.borrow_mut().iter_mut() {
            node.grad = None;
        }
    }
}
