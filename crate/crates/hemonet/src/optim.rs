//! Gradient-descent optimizers: Adam, RMSProp, and SGD with momentum.
//!
//! One optimizer instance owns the auxiliary state (moment buffers, step
//! counter) for one training run; parameters themselves live in the model's
//! [`ParamStore`].

use crate::nn::{ParamId, ParamStore};
use crate::tensor::Tensor;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Adam,
    SgdMomentum,
    Rmsprop,
}

/// Optimizer hyperparameters with the conventional defaults.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimizerHyper {
    /// Adam first-moment decay.
    pub beta1: f32,
    /// Adam second-moment decay.
    pub beta2: f32,
    /// Denominator floor for the adaptive methods.
    pub epsilon: f32,
    /// SGD momentum coefficient.
    pub momentum: f32,
    /// RMSProp squared-gradient decay.
    pub decay: f32,
}

impl Default for OptimizerHyper {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            momentum: 0.9,
            decay: 0.9,
        }
    }
}

#[derive(Debug, Clone, Default)]
struct Buffers {
    m: Vec<f32>,
    v: Vec<f32>,
}

/// Optimizer with per-parameter auxiliary buffers, allocated on first use and
/// shaped like the parameters they track.
#[derive(Debug, Clone)]
pub struct Optimizer {
    pub kind: OptimizerKind,
    pub hyper: OptimizerHyper,
    state: Vec<Option<Buffers>>,
    step_count: u64,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind) -> Self {
        Self {
            kind,
            hyper: OptimizerHyper::default(),
            state: Vec::new(),
            step_count: 0,
        }
    }

    pub fn with_hyper(kind: OptimizerKind, hyper: OptimizerHyper) -> Self {
        Self {
            kind,
            hyper,
            state: Vec::new(),
            step_count: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    /// Applies one update to every `(parameter, gradient)` pair. Frozen
    /// parameters are skipped even when a gradient is supplied.
    pub fn step(
        &mut self,
        store: &mut ParamStore<f32>,
        grads: &[(ParamId, Tensor<f32>)],
        learning_rate: f32,
    ) {
        self.step_count += 1;
        if self.state.len() < store.len() {
            self.state.resize(store.len(), None);
        }
        let t = self.step_count as i32;
        let hyper = self.hyper;
        for (id, grad) in grads {
            if !store.entries()[id.index()].trainable() {
                continue;
            }
            let value = store.value_mut(*id);
            debug_assert_eq!(value.shape(), grad.shape());
            let buffers = self.state[id.index()].get_or_insert_with(|| Buffers {
                m: vec![0.0; value.len()],
                v: vec![0.0; value.len()],
            });
            let w = value.data_mut();
            let g = grad.data();
            match self.kind {
                OptimizerKind::Adam => {
                    let bc1 = 1.0 - hyper.beta1.powi(t);
                    let bc2 = 1.0 - hyper.beta2.powi(t);
                    for i in 0..w.len() {
                        let m = &mut buffers.m[i];
                        let v = &mut buffers.v[i];
                        *m = hyper.beta1 * *m + (1.0 - hyper.beta1) * g[i];
                        *v = hyper.beta2 * *v + (1.0 - hyper.beta2) * g[i] * g[i];
                        let m_hat = *m / bc1;
                        let v_hat = *v / bc2;
                        w[i] -= learning_rate * m_hat / (v_hat.sqrt() + hyper.epsilon);
                    }
                }
                OptimizerKind::Rmsprop => {
                    for i in 0..w.len() {
                        let v = &mut buffers.v[i];
                        *v = hyper.decay * *v + (1.0 - hyper.decay) * g[i] * g[i];
                        w[i] -= learning_rate * g[i] / (v.sqrt() + hyper.epsilon);
                    }
                }
                OptimizerKind::SgdMomentum => {
                    for i in 0..w.len() {
                        let m = &mut buffers.m[i];
                        *m = hyper.momentum * *m + g[i];
                        w[i] -= learning_rate * *m;
                    }
                }
            }
        }
    }
}
