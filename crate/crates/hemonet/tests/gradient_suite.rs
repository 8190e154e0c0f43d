//! Finite-difference verification of every differentiable primitive and
//! composite block, evaluated in f64 with central differences.

mod common;

use common::random_tensor;
use hemonet::gradcheck::{check_gradients, DEFAULT_STEP};
use hemonet::nn::{
    DenseBlock, ForwardCtx, ParamId, ParamKind, ParamStore, ResidualBlock, SeBlock, VggStack,
};
use hemonet::ops::{self, PoolMode};
use hemonet::tape::{GradTape, Var};
use hemonet::tensor::Tensor;
use hemonet::Phase;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const TOLERANCE: f64 = 1e-3;

/// Scalarizes an output by a fixed random weighting, which exercises every
/// output element with a distinct coefficient.
fn weighted_sum(tape: &GradTape<f64>, y: Var, seed: u64) -> Var {
    let shape = tape.value(y).shape().to_vec();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w = tape.constant(random_tensor(&shape, &mut rng));
    let wy = ops::mul(tape, y, w).unwrap();
    ops::sum(tape, wy)
}

#[test]
fn conv2d_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let x: Tensor<f64> = random_tensor(&[2, 2, 4, 4], &mut rng);
    let w: Tensor<f64> = random_tensor(&[3, 2, 3, 3], &mut rng);
    let b: Tensor<f64> = random_tensor(&[3], &mut rng);
    let report = check_gradients(&[x, w, b], DEFAULT_STEP, |tape, vars| {
        let y = ops::conv2d(tape, vars[0], vars[1], Some(vars[2]), 2, 1).unwrap();
        weighted_sum(tape, y, 10)
    });
    assert!(report.max_rel_error < TOLERANCE, "{report:?}");
}

#[test]
fn grouped_conv_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let x: Tensor<f64> = random_tensor(&[1, 4, 4, 4], &mut rng);
    let w: Tensor<f64> = random_tensor(&[4, 2, 3, 3], &mut rng);
    let report = check_gradients(&[x, w], DEFAULT_STEP, |tape, vars| {
        let y = ops::grouped_conv2d(tape, vars[0], vars[1], None, 1, 1, 2).unwrap();
        weighted_sum(tape, y, 11)
    });
    assert!(report.max_rel_error < TOLERANCE, "{report:?}");
}

#[test]
fn pooling_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let x: Tensor<f64> = random_tensor(&[2, 2, 4, 4], &mut rng);
    for (mode, seed) in [(PoolMode::Max, 12), (PoolMode::Average, 13)] {
        let report = check_gradients(std::slice::from_ref(&x), DEFAULT_STEP, move |tape, vars| {
            let y = ops::pool2d(tape, vars[0], 2, 2, mode).unwrap();
            weighted_sum(tape, y, seed)
        });
        assert!(report.max_rel_error < TOLERANCE, "{mode:?}: {report:?}");
    }
}

#[test]
fn global_avg_pool_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let x: Tensor<f64> = random_tensor(&[2, 3, 3, 3], &mut rng);
    let report = check_gradients(&[x], DEFAULT_STEP, |tape, vars| {
        let y = ops::global_avg_pool(tape, vars[0]).unwrap();
        weighted_sum(tape, y, 14)
    });
    assert!(report.max_rel_error < TOLERANCE, "{report:?}");
}

#[test]
fn dense_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let x: Tensor<f64> = random_tensor(&[3, 5], &mut rng);
    let w: Tensor<f64> = random_tensor(&[4, 5], &mut rng);
    let b: Tensor<f64> = random_tensor(&[4], &mut rng);
    let report = check_gradients(&[x, w, b], DEFAULT_STEP, |tape, vars| {
        let y = ops::dense(tape, vars[0], vars[1], Some(vars[2])).unwrap();
        weighted_sum(tape, y, 15)
    });
    assert!(report.max_rel_error < TOLERANCE, "{report:?}");
}

#[test]
fn batchnorm_gradients_in_both_phases() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let x: Tensor<f64> = random_tensor(&[2, 2, 3, 3], &mut rng);
    let gamma: Tensor<f64> = random_tensor(&[2], &mut rng);
    let beta: Tensor<f64> = random_tensor(&[2], &mut rng);
    for (phase, seed) in [(Phase::Train, 16), (Phase::Eval, 17)] {
        let report = check_gradients(
            &[x.clone(), gamma.clone(), beta.clone()],
            DEFAULT_STEP,
            move |tape, vars| {
                let mut rm = Tensor::filled(&[2], 0.3);
                let mut rv = Tensor::filled(&[2], 1.7);
                let y = ops::batchnorm(
                    tape, vars[0], vars[1], vars[2], &mut rm, &mut rv, phase, 1e-5, 0.9,
                )
                .unwrap();
                weighted_sum(tape, y, seed)
            },
        );
        assert!(report.max_rel_error < TOLERANCE, "{phase:?}: {report:?}");
    }
}

#[test]
fn activation_gradients() {
    // Values chosen away from the ReLU kink.
    let x = Tensor::from_vec(&[6], vec![3.0, -3.0, 0.7, -0.9, 1.4, -2.2]).unwrap();
    let report = check_gradients(std::slice::from_ref(&x), DEFAULT_STEP, |tape, vars| {
        let y = ops::relu(tape, vars[0]);
        weighted_sum(tape, y, 18)
    });
    assert!(report.max_rel_error < TOLERANCE, "relu: {report:?}");

    let report = check_gradients(&[x], DEFAULT_STEP, |tape, vars| {
        let y = ops::sigmoid(tape, vars[0]);
        weighted_sum(tape, y, 19)
    });
    assert!(report.max_rel_error < TOLERANCE, "sigmoid: {report:?}");
}

#[test]
fn softmax_cross_entropy_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let logits: Tensor<f64> = random_tensor(&[3, 4], &mut rng);
    let mut onehot = Tensor::zeros(&[3, 4]);
    for (row, class) in [0usize, 2, 3].iter().enumerate() {
        onehot.data_mut()[row * 4 + class] = 1.0;
    }
    let y = onehot.clone();
    let report = check_gradients(
        std::slice::from_ref(&logits),
        DEFAULT_STEP,
        move |tape, vars| {
            let p = ops::softmax(tape, vars[0]).unwrap();
            let t = tape.constant(y.clone());
            ops::cross_entropy(tape, p, t).unwrap()
        },
    );
    assert!(report.max_rel_error < TOLERANCE, "{report:?}");

    // The composed gradient through softmax is (p - y) / N.
    let tape = GradTape::<f64>::new();
    let z = tape.leaf(logits, true);
    let p = ops::softmax(&tape, z).unwrap();
    let t = tape.constant(onehot.clone());
    let loss = ops::cross_entropy(&tape, p, t).unwrap();
    tape.backward(loss).unwrap();
    let grad = tape.grad(z).unwrap();
    let probs = tape.value_cloned(p);
    for i in 0..grad.len() {
        let expected = (probs.data()[i] - onehot.data()[i]) / 3.0;
        assert!(
            (grad.data()[i] - expected).abs() < 1e-9,
            "logit gradient {i}: {} vs {}",
            grad.data()[i],
            expected
        );
    }
}

#[test]
fn dropout_gradients_under_fixed_mask() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let x: Tensor<f64> = random_tensor(&[4, 4], &mut rng);
    let report = check_gradients(&[x], DEFAULT_STEP, |tape, vars| {
        let y = ops::dropout(tape, vars[0], 0.4, Phase::Train, 77).unwrap();
        weighted_sum(tape, y, 20)
    });
    assert!(report.max_rel_error < TOLERANCE, "{report:?}");
}

/// Runs a finite-difference check over a block's input and every trainable
/// weight, rebuilding the block's store for each evaluation.
fn check_block<B, F>(template: ParamStore<f64>, block: B, x: Tensor<f64>, forward: F)
where
    B: Clone,
    F: Fn(&B, &mut ForwardCtx<'_, f64>, &mut ParamStore<f64>, Var) -> Var,
{
    let weight_ids: Vec<ParamId> = template
        .iter_ids()
        .filter(|(_, e)| e.kind == ParamKind::Weight)
        .map(|(id, _)| id)
        .collect();
    let mut inputs = vec![x];
    inputs.extend(weight_ids.iter().map(|&id| template.value(id).clone()));

    let report = check_gradients(&inputs, DEFAULT_STEP, move |tape, vars| {
        let mut bindings = vec![None; template.len()];
        for (slot, id) in weight_ids.iter().enumerate() {
            bindings[id.index()] = Some(vars[slot + 1]);
        }
        let mut ctx = ForwardCtx::with_bindings(tape, Phase::Train, 55, bindings);
        let mut store = template.clone();
        let y = forward(&block, &mut ctx, &mut store, vars[0]);
        weighted_sum(tape, y, 21)
    });
    assert!(report.max_rel_error < TOLERANCE, "{report:?}");
}

#[test]
fn residual_block_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut store = ParamStore::<f64>::new();
    let block = ResidualBlock::init(&mut store, "b", 2, 2, 1, 1, None, &mut rng);
    let x = random_tensor(&[2, 2, 3, 3], &mut rng);
    check_block(store, block, x, |b, ctx, s, x| {
        b.forward(ctx, s, x).unwrap()
    });
}

#[test]
fn projected_grouped_se_residual_block_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let mut store = ParamStore::<f64>::new();
    let block = ResidualBlock::init(&mut store, "b", 2, 4, 2, 2, Some(2), &mut rng);
    assert!(block.projection.is_some());
    let x = random_tensor(&[1, 2, 4, 4], &mut rng);
    check_block(store, block, x, |b, ctx, s, x| {
        b.forward(ctx, s, x).unwrap()
    });
}

#[test]
fn dense_block_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut store = ParamStore::<f64>::new();
    let block = DenseBlock::init(&mut store, "d", 2, 3, 2, &mut rng);
    let x = random_tensor(&[1, 2, 3, 3], &mut rng);
    check_block(store, block, x, |b, ctx, s, x| {
        b.forward(ctx, s, x).unwrap()
    });
}

#[test]
fn se_block_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let mut store = ParamStore::<f64>::new();
    let block = SeBlock::init(&mut store, "se", 4, 2, &mut rng);
    let x = random_tensor(&[2, 4, 2, 2], &mut rng);
    check_block(store, block, x, |b, ctx, s, x| {
        let _ = s;
        b.forward(ctx, x).unwrap()
    });
}

#[test]
fn vgg_stack_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let mut store = ParamStore::<f64>::new();
    let block = VggStack::init(&mut store, "v", 1, 2, 2, 1, &mut rng);
    let x = random_tensor(&[1, 1, 4, 4], &mut rng);
    check_block(store, block, x, |b, ctx, s, x| {
        let _ = s;
        b.forward(ctx, x).unwrap()
    });
}
