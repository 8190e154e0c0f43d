//! Convex-surrogate sanity: a single dense layer trained with Adam on a
//! linearly separable toy set should descend smoothly. Across seeded runs,
//! the epoch-mean training loss must be non-increasing after epoch 3 in at
//! least 95% of cases.

use hemonet::nn::{he_normal, seeded_rng, ParamKind, ParamStore};
use hemonet::ops;
use hemonet::optim::{Optimizer, OptimizerKind};
use hemonet::tape::GradTape;
use hemonet::tensor::Tensor;
use rand::seq::SliceRandom;
use rand::Rng;

const FEATURES: usize = 6;
const CLASSES: usize = 2;

/// Two well-separated gaussian blobs in feature space.
fn toy_set(seed: u64, n_per_class: usize) -> (Vec<Vec<f32>>, Vec<usize>) {
    let mut rng = seeded_rng(seed);
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for class in 0..CLASSES {
        let center = if class == 0 { 1.0 } else { -1.0 };
        for _ in 0..n_per_class {
            let x: Vec<f32> = (0..FEATURES)
                .map(|_| center + rng.random_range(-0.4..0.4))
                .collect();
            xs.push(x);
            ys.push(class);
        }
    }
    (xs, ys)
}

/// One dense-layer training run; returns the epoch-mean losses.
fn run(seed: u64, epochs: usize) -> Vec<f32> {
    let (xs, ys) = toy_set(seed, 16);
    let mut rng = seeded_rng(seed ^ 0xABCD);
    let mut store = ParamStore::new();
    let w = store.add(
        "w",
        he_normal(&[CLASSES, FEATURES], FEATURES, &mut rng),
        ParamKind::Weight,
    );
    let b = store.add("b", Tensor::zeros(&[CLASSES]), ParamKind::Weight);
    let mut optimizer = Optimizer::new(OptimizerKind::Adam);

    let mut losses = Vec::new();
    let mut order: Vec<usize> = (0..xs.len()).collect();
    for epoch in 0..epochs {
        let mut epoch_rng = seeded_rng(seed.wrapping_add(epoch as u64));
        order.shuffle(&mut epoch_rng);
        let mut epoch_loss = 0.0f64;
        for chunk in order.chunks(8) {
            let mut batch = Vec::new();
            let mut onehot = vec![0.0f32; chunk.len() * CLASSES];
            for (row, &i) in chunk.iter().enumerate() {
                batch.extend_from_slice(&xs[i]);
                onehot[row * CLASSES + ys[i]] = 1.0;
            }
            let tape = GradTape::new();
            let x = tape.constant(Tensor::from_vec(&[chunk.len(), FEATURES], batch).unwrap());
            let wv = tape.leaf(store.value(w).clone(), true);
            let bv = tape.leaf(store.value(b).clone(), true);
            let logits = ops::dense(&tape, x, wv, Some(bv)).unwrap();
            let probs = ops::softmax(&tape, logits).unwrap();
            let targets = tape.constant(Tensor::from_vec(&[chunk.len(), CLASSES], onehot).unwrap());
            let loss = ops::cross_entropy(&tape, probs, targets).unwrap();
            epoch_loss += tape.value(loss).data()[0] as f64 * chunk.len() as f64;
            tape.backward(loss).unwrap();
            let grads: Vec<_> = [(w, wv), (b, bv)]
                .into_iter()
                .filter_map(|(id, var)| tape.grad(var).map(|g| (id, g)))
                .collect();
            optimizer.step(&mut store, &grads, 1e-2);
        }
        losses.push((epoch_loss / xs.len() as f64) as f32);
    }
    losses
}

#[test]
fn adam_descends_monotonically_on_separable_data() {
    let seeds: Vec<u64> = (0..20).collect();
    let mut monotone = 0usize;
    for &seed in &seeds {
        let losses = run(seed, 10);
        let ok = losses
            .windows(2)
            .skip(2) // after epoch 3
            .all(|pair| pair[1] <= pair[0] + 1e-6);
        if ok {
            monotone += 1;
        }
    }
    assert!(
        monotone * 100 >= seeds.len() * 95,
        "only {monotone}/{} runs were non-increasing after epoch 3",
        seeds.len()
    );
}
