//! The training loop: seeded mini-batch shuffling, forward/backward steps,
//! per-epoch metrics, early stopping with best-weight restoration, and
//! layer freezing for transfer-style fine-tuning.

use crate::arch::{Model, ModelError};
use crate::metrics::argmax_label;
use crate::nn::ForwardCtx;
use crate::ops::{self, CROSS_ENTROPY_CLIP};
use crate::optim::{Optimizer, OptimizerKind};
use crate::tape::GradTape;
use crate::tensor::Tensor;
use crate::Phase;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("dataset image shape {got:?} does not match model input {expected:?}")]
    SampleShape {
        expected: Vec<usize>,
        got: Vec<usize>,
    },
    #[error("dataset has labels up to {max_label} but the model has {classes} classes")]
    LabelRange { max_label: usize, classes: usize },
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("freeze boundary `{0}` does not name any parameter")]
    UnknownBoundary(String),
    #[error("freeze fraction {0} outside [0, 1]")]
    BadFraction(f64),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Labeled image tensors ready for batching: every image is `[C, H, W]`.
#[derive(Debug, Clone)]
pub struct TensorDataset {
    images: Vec<Tensor<f32>>,
    labels: Vec<usize>,
    classes: usize,
}

impl TensorDataset {
    pub fn new(
        images: Vec<Tensor<f32>>,
        labels: Vec<usize>,
        classes: usize,
    ) -> Result<Self, TrainError> {
        if images.is_empty() || images.len() != labels.len() {
            return Err(TrainError::EmptyDataset);
        }
        if let Some(&max_label) = labels.iter().max() {
            if max_label >= classes {
                return Err(TrainError::LabelRange { max_label, classes });
            }
        }
        Ok(Self {
            images,
            labels,
            classes,
        })
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn image(&self, index: usize) -> &Tensor<f32> {
        &self.images[index]
    }

    /// Stacks the indexed images into a `[B, C, H, W]` batch plus one-hot
    /// `[B, K]` labels.
    pub fn batch(&self, indices: &[usize]) -> (Tensor<f32>, Tensor<f32>) {
        let shape = self.images[indices[0]].shape();
        let per_image: usize = shape.iter().product();
        let mut batch_shape = vec![indices.len()];
        batch_shape.extend_from_slice(shape);
        let mut data = vec![0.0f32; indices.len() * per_image];
        let mut onehot = vec![0.0f32; indices.len() * self.classes];
        for (row, &idx) in indices.iter().enumerate() {
            data[row * per_image..(row + 1) * per_image].copy_from_slice(self.images[idx].data());
            onehot[row * self.classes + self.labels[idx]] = 1.0;
        }
        (
            Tensor::from_vec(&batch_shape, data).expect("batch shape"),
            Tensor::from_vec(&[indices.len(), self.classes], onehot).expect("one-hot shape"),
        )
    }
}

/// Hyperparameters of one training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f32,
    pub dropout: f64,
    pub optimizer: OptimizerKind,
    /// Consecutive non-improving epochs tolerated before stopping.
    pub patience: usize,
    /// Validation loss must drop by more than this to count as improvement.
    pub min_delta: f32,
    pub seed: u64,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            epochs: 60,
            batch_size: 16,
            learning_rate: 1e-4,
            dropout: 0.1,
            optimizer: OptimizerKind::Adam,
            patience: 10,
            min_delta: 0.0,
            seed: 0,
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if self.epochs == 0 {
            return Err(TrainError::Config("epochs must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(TrainError::Config("batch_size must be at least 1".into()));
        }
        if self.learning_rate < 0.0 {
            return Err(TrainError::Config(
                "learning_rate must be non-negative".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(TrainError::Config("dropout must lie in [0, 1)".into()));
        }
        Ok(())
    }
}

/// One epoch of history (`epoch` is 1-based).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f32,
    pub train_accuracy: f32,
    pub val_loss: f32,
    pub val_accuracy: f32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingHistory {
    pub epochs: Vec<EpochRecord>,
    /// 1-based epoch with the lowest validation loss.
    pub best_epoch: usize,
    pub stopped_early: bool,
}

/// Early-stopping decision state. Improvement means the monitored loss drops
/// below `best - min_delta`; `patience` consecutive non-improving epochs stop
/// the run (patience 0 stops on the first one).
#[derive(Debug, Clone)]
pub struct EarlyStopping {
    patience: usize,
    min_delta: f32,
    best: f32,
    best_epoch: usize,
    stale: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopDecision {
    Continue,
    Stop,
}

impl EarlyStopping {
    pub fn new(patience: usize, min_delta: f32) -> Self {
        Self {
            patience,
            min_delta,
            best: f32::INFINITY,
            best_epoch: 0,
            stale: 0,
        }
    }

    /// Feeds one epoch's validation loss; returns whether to stop and
    /// whether this epoch became the new best.
    pub fn update(&mut self, epoch: usize, val_loss: f32) -> (StopDecision, bool) {
        if val_loss < self.best - self.min_delta {
            self.best = val_loss;
            self.best_epoch = epoch;
            self.stale = 0;
            (StopDecision::Continue, true)
        } else {
            self.stale += 1;
            if self.stale >= self.patience.max(1) {
                (StopDecision::Stop, false)
            } else {
                (StopDecision::Continue, false)
            }
        }
    }

    pub fn best_epoch(&self) -> usize {
        self.best_epoch
    }

    pub fn best_loss(&self) -> f32 {
        self.best
    }
}

/// Mean cross-entropy and accuracy of probability rows against labels.
fn score(probs: &Tensor<f32>, labels: &[usize]) -> (f32, usize) {
    let k = probs.dim(1);
    let mut loss = 0.0f64;
    let mut correct = 0usize;
    for (row, &label) in probs.data().chunks(k).zip(labels) {
        loss -= (row[label] as f64 + CROSS_ENTROPY_CLIP).ln();
        if argmax_label(row) == label {
            correct += 1;
        }
    }
    (loss as f32, correct)
}

/// Loss and accuracy of a model over a dataset in eval mode.
pub fn evaluate(
    model: &mut Model,
    set: &TensorDataset,
    batch_size: usize,
) -> Result<(f32, f32), TrainError> {
    let (probs, labels) = predict(model, set, batch_size)?;
    let (loss_sum, correct) = score(&probs, &labels);
    Ok((
        loss_sum / set.len() as f32,
        correct as f32 / set.len() as f32,
    ))
}

/// Eval-mode class probabilities for a whole dataset, in dataset order.
pub fn predict(
    model: &mut Model,
    set: &TensorDataset,
    batch_size: usize,
) -> Result<(Tensor<f32>, Vec<usize>), TrainError> {
    if set.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    let k = set.classes();
    let mut out = vec![0.0f32; set.len() * k];
    let indices: Vec<usize> = (0..set.len()).collect();
    for (bi, chunk) in indices.chunks(batch_size.max(1)).enumerate() {
        let (batch, _) = set.batch(chunk);
        let probs = model.forward(&batch, Phase::Eval, bi as u64)?;
        let start = chunk[0] * k;
        out[start..start + chunk.len() * k].copy_from_slice(probs.data());
    }
    Ok((
        Tensor::from_vec(&[set.len(), k], out).expect("shape"),
        set.labels().to_vec(),
    ))
}

fn check_compatibility(model: &Model, set: &TensorDataset) -> Result<(), TrainError> {
    let expected: Vec<usize> = model.config.input_shape.to_vec();
    let got = set.image(0).shape().to_vec();
    if got != expected {
        return Err(TrainError::SampleShape { expected, got });
    }
    if set.classes() != model.config.classes {
        return Err(TrainError::LabelRange {
            max_label: set.classes() - 1,
            classes: model.config.classes,
        });
    }
    Ok(())
}

/// Trains the model in place and returns the per-epoch history. The model is
/// left at the best-validation-loss epoch's weights (running statistics
/// included), not the last epoch's.
pub fn train(
    model: &mut Model,
    train_set: &TensorDataset,
    val_set: &TensorDataset,
    config: &TrainingConfig,
) -> Result<TrainingHistory, TrainError> {
    config.validate()?;
    if train_set.is_empty() || val_set.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    check_compatibility(model, train_set)?;
    check_compatibility(model, val_set)?;
    model.config.dropout = config.dropout;

    let mut optimizer = Optimizer::new(config.optimizer);
    let mut stopper = EarlyStopping::new(config.patience, config.min_delta);
    let mut history = TrainingHistory {
        epochs: Vec::new(),
        best_epoch: 0,
        stopped_early: false,
    };
    let mut best_params: Vec<Tensor<f32>> = Vec::new();

    let mut indices: Vec<usize> = (0..train_set.len()).collect();
    for epoch in 1..=config.epochs {
        // Reproducible batch order: epoch e reshuffles with seed + e.
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(epoch as u64));
        indices.shuffle(&mut rng);

        let mut epoch_loss = 0.0f64;
        let mut epoch_correct = 0usize;
        for (bi, chunk) in indices.chunks(config.batch_size).enumerate() {
            let (batch, onehot) = train_set.batch(chunk);
            let tape = GradTape::new();
            let dropout_seed = crate::mix_seed(config.seed, &[epoch as u64, bi as u64]);
            let mut ctx = ForwardCtx::bind(&tape, &model.store, Phase::Train, dropout_seed, true);
            let batch_var = tape.constant(batch);
            let probs = model.forward_vars(&mut ctx, batch_var)?;
            let targets = tape.constant(onehot);
            let loss = ops::cross_entropy(ctx.tape, probs, targets)
                .map_err(crate::nn::BlockError::from)
                .map_err(ModelError::from)?;

            {
                let labels: Vec<usize> = chunk.iter().map(|&i| train_set.labels()[i]).collect();
                let p = tape.value(probs);
                let (batch_loss_sum, correct) = score(&p, &labels);
                // `score` sums per-sample losses; the tape loss is their mean.
                epoch_loss += batch_loss_sum as f64;
                epoch_correct += correct;
            }

            tape.backward(loss).expect("scalar loss");
            let grads: Vec<_> = ctx
                .bound()
                .filter_map(|(id, var)| tape.grad(var).map(|g| (id, g)))
                .collect();
            optimizer.step(&mut model.store, &grads, config.learning_rate);
        }

        let (val_loss, val_accuracy) = evaluate(model, val_set, config.batch_size)?;
        history.epochs.push(EpochRecord {
            epoch,
            train_loss: (epoch_loss / train_set.len() as f64) as f32,
            train_accuracy: epoch_correct as f32 / train_set.len() as f32,
            val_loss,
            val_accuracy,
        });

        let (decision, improved) = stopper.update(epoch, val_loss);
        if improved {
            best_params = model
                .store
                .entries()
                .iter()
                .map(|e| e.value.clone())
                .collect();
        }
        if decision == StopDecision::Stop {
            history.stopped_early = true;
            break;
        }
    }

    if !best_params.is_empty() {
        for (entry, best) in model.store.entries_mut().iter_mut().zip(best_params) {
            entry.value = best;
        }
    }
    history.best_epoch = stopper.best_epoch();
    Ok(history)
}

/// Where to stop updating parameters: everything registered before the
/// boundary is frozen.
#[derive(Debug, Clone)]
pub enum FreezeBoundary {
    /// Freeze the first `fraction` of weight tensors (by registration order,
    /// which follows network depth).
    Fraction(f64),
    /// Freeze every parameter registered before the first one whose name
    /// starts with this prefix.
    Before(String),
}

/// Marks a prefix of the model as frozen and returns how many entries were
/// affected. Frozen weights receive no optimizer updates and frozen
/// normalization layers stop tracking batch statistics.
pub fn freeze_layers(model: &mut Model, boundary: FreezeBoundary) -> Result<usize, TrainError> {
    let cut = match &boundary {
        FreezeBoundary::Fraction(f) => {
            if !(0.0..=1.0).contains(f) {
                return Err(TrainError::BadFraction(*f));
            }
            let weight_total = model
                .store
                .entries()
                .iter()
                .filter(|e| e.kind == crate::nn::ParamKind::Weight)
                .count();
            let freeze_weights = (*f * weight_total as f64).floor() as usize;
            // Find the store index after the nth weight entry.
            let mut seen = 0usize;
            let mut cut = 0usize;
            for (i, e) in model.store.entries().iter().enumerate() {
                if seen == freeze_weights {
                    break;
                }
                if e.kind == crate::nn::ParamKind::Weight {
                    seen += 1;
                }
                cut = i + 1;
            }
            if freeze_weights == weight_total {
                model.store.len()
            } else {
                cut
            }
        }
        FreezeBoundary::Before(prefix) => model
            .store
            .entries()
            .iter()
            .position(|e| e.name.starts_with(prefix.as_str()))
            .ok_or_else(|| TrainError::UnknownBoundary(prefix.clone()))?,
    };
    let mut frozen = 0usize;
    for entry in &mut model.store.entries_mut()[..cut] {
        entry.frozen = true;
        frozen += 1;
    }
    Ok(frozen)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::arch::{build_model, presets};
    use rand::Rng;

    /// Tiny two-class set: class 0 images are bright in the top half, class 1
    /// in the bottom half, plus seeded noise.
    fn toy_set(per_class: usize, seed: u64) -> TensorDataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut images = Vec::new();
        let mut labels = Vec::new();
        for class in 0..2usize {
            for _ in 0..per_class {
                let mut img = Tensor::zeros(&[3, 32, 32]);
                for (i, v) in img.data_mut().iter_mut().enumerate() {
                    let row = (i % 1024) / 32;
                    let hot = if class == 0 { row < 16 } else { row >= 16 };
                    let base: f32 = if hot { 0.8 } else { 0.2 };
                    *v = base + rng.random_range(-0.1..0.1);
                }
                images.push(img);
                labels.push(class);
            }
        }
        TensorDataset::new(images, labels, 2).unwrap()
    }

    #[test]
    fn early_stopping_follows_the_hand_trace() {
        let mut stopper = EarlyStopping::new(3, 0.0);
        let losses = [0.5, 0.4, 0.41, 0.42, 0.43];
        let mut stopped_at = None;
        for (i, &l) in losses.iter().enumerate() {
            let (decision, _) = stopper.update(i + 1, l);
            if decision == StopDecision::Stop {
                stopped_at = Some(i + 1);
                break;
            }
        }
        assert_eq!(stopped_at, Some(5));
        assert_eq!(stopper.best_epoch(), 2);
    }

    #[test]
    fn early_stopping_never_fires_on_decreasing_losses() {
        let mut stopper = EarlyStopping::new(3, 0.0);
        for epoch in 1..=50 {
            let (decision, improved) = stopper.update(epoch, 1.0 / epoch as f32);
            assert_eq!(decision, StopDecision::Continue);
            assert!(improved);
        }
    }

    #[test]
    fn zero_patience_stops_at_first_stall() {
        let mut stopper = EarlyStopping::new(0, 0.0);
        assert_eq!(stopper.update(1, 0.5), (StopDecision::Continue, true));
        assert_eq!(stopper.update(2, 0.5).0, StopDecision::Stop);
    }

    #[test]
    fn zero_learning_rate_changes_nothing() {
        let mut model = build_model(&presets::vgg_mini(2), 5).unwrap();
        let before: Vec<Vec<f32>> = model
            .store
            .entries()
            .iter()
            .map(|e| e.value.data().to_vec())
            .collect();
        let set = toy_set(8, 1);
        // Dropout off so the forward pass is a pure function of the weights;
        // with frozen weights the per-epoch metrics must then be constant.
        let config = TrainingConfig {
            epochs: 2,
            batch_size: 4,
            learning_rate: 0.0,
            dropout: 0.0,
            ..TrainingConfig::default()
        };
        let history = train(&mut model, &set, &set, &config).unwrap();
        // Batchnorm running stats still move; weights must not.
        for (entry, old) in model.store.entries().iter().zip(&before) {
            if entry.kind == crate::nn::ParamKind::Weight {
                assert_eq!(entry.value.data(), &old[..], "{}", entry.name);
            }
        }
        assert_eq!(history.epochs.len(), 2);
        assert!((history.epochs[0].train_accuracy - history.epochs[1].train_accuracy).abs() < 1e-6);
    }

    #[test]
    fn training_is_reproducible() {
        let run = || {
            let mut model = build_model(&presets::resnet_mini(2), 9).unwrap();
            let set = toy_set(8, 3);
            let config = TrainingConfig {
                epochs: 2,
                batch_size: 4,
                learning_rate: 1e-3,
                ..TrainingConfig::default()
            };
            train(&mut model, &set, &set, &config).unwrap()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn converges_on_linearly_separable_toys() {
        let mut model = build_model(&presets::vgg_mini(2), 11).unwrap();
        let set = toy_set(16, 7);
        let config = TrainingConfig {
            epochs: 12,
            batch_size: 8,
            learning_rate: 1e-3,
            ..TrainingConfig::default()
        };
        let history = train(&mut model, &set, &set, &config).unwrap();
        let best = history
            .epochs
            .iter()
            .map(|e| e.train_accuracy)
            .fold(0.0f32, f32::max);
        assert!(best >= 0.95, "best accuracy {best}");
    }

    #[test]
    fn restores_best_epoch_weights() {
        let mut model = build_model(&presets::vgg_mini(2), 13).unwrap();
        let set = toy_set(8, 5);
        let config = TrainingConfig {
            epochs: 6,
            batch_size: 4,
            learning_rate: 1e-3,
            patience: 2,
            ..TrainingConfig::default()
        };
        let history = train(&mut model, &set, &set, &config).unwrap();
        let best = &history.epochs[history.best_epoch - 1];
        // Re-evaluating the restored model reproduces the recorded best loss.
        let (val_loss, _) = evaluate(&mut model, &set, 4).unwrap();
        assert_eq!(val_loss.to_bits(), best.val_loss.to_bits());
    }

    #[test]
    fn frozen_prefix_stays_byte_identical() {
        let mut model = build_model(&presets::resnet_mini(2), 17).unwrap();
        freeze_layers(&mut model, FreezeBoundary::Before("stage1".into())).unwrap();
        let frozen_before: Vec<(String, Vec<f32>)> = model
            .store
            .entries()
            .iter()
            .filter(|e| e.frozen)
            .map(|e| (e.name.clone(), e.value.data().to_vec()))
            .collect();
        assert!(!frozen_before.is_empty());

        let set = toy_set(8, 2);
        let config = TrainingConfig {
            epochs: 3,
            batch_size: 4,
            learning_rate: 1e-2,
            ..TrainingConfig::default()
        };
        train(&mut model, &set, &set, &config).unwrap();

        let mut unfrozen_changed = false;
        let mut frozen_iter = frozen_before.iter();
        for entry in model.store.entries() {
            if entry.frozen {
                let (name, old) = frozen_iter.next().unwrap();
                assert_eq!(&entry.name, name);
                let same = entry
                    .value
                    .data()
                    .iter()
                    .zip(old)
                    .all(|(a, b)| a.to_bits() == b.to_bits());
                assert!(same, "frozen {} changed", entry.name);
            } else if entry.kind == crate::nn::ParamKind::Weight {
                unfrozen_changed = true;
            }
        }
        assert!(unfrozen_changed);
    }

    #[test]
    fn freeze_everything_blocks_all_updates() {
        let mut model = build_model(&presets::vgg_mini(2), 19).unwrap();
        let n = freeze_layers(&mut model, FreezeBoundary::Fraction(1.0)).unwrap();
        assert_eq!(n, model.store.len());
        let before: Vec<Vec<f32>> = model
            .store
            .entries()
            .iter()
            .map(|e| e.value.data().to_vec())
            .collect();
        let set = toy_set(4, 8);
        let config = TrainingConfig {
            epochs: 2,
            batch_size: 4,
            learning_rate: 1e-2,
            ..TrainingConfig::default()
        };
        train(&mut model, &set, &set, &config).unwrap();
        for (entry, old) in model.store.entries().iter().zip(&before) {
            assert_eq!(entry.value.data(), &old[..], "{}", entry.name);
        }
    }

    #[test]
    fn freeze_fraction_zero_is_normal_training() {
        let run = |freeze: bool| {
            let mut model = build_model(&presets::vgg_mini(2), 23).unwrap();
            if freeze {
                freeze_layers(&mut model, FreezeBoundary::Fraction(0.0)).unwrap();
            }
            let set = toy_set(4, 9);
            let config = TrainingConfig {
                epochs: 2,
                batch_size: 4,
                learning_rate: 1e-3,
                ..TrainingConfig::default()
            };
            train(&mut model, &set, &set, &config).unwrap()
        };
        assert_eq!(run(false), run(true));
    }

    #[test]
    fn unknown_freeze_boundary_errors() {
        let mut model = build_model(&presets::vgg_mini(2), 29).unwrap();
        assert!(matches!(
            freeze_layers(&mut model, FreezeBoundary::Before("nonexistent".into())),
            Err(TrainError::UnknownBoundary(_))
        ));
    }

    #[test]
    fn config_and_dataset_validation() {
        let mut model = build_model(&presets::vgg_mini(2), 31).unwrap();
        let set = toy_set(4, 10);
        let bad = TrainingConfig {
            epochs: 0,
            ..TrainingConfig::default()
        };
        assert!(matches!(
            train(&mut model, &set, &set, &bad),
            Err(TrainError::Config(_))
        ));
        assert!(TensorDataset::new(vec![], vec![], 2).is_err());
        assert!(TensorDataset::new(vec![Tensor::zeros(&[3, 32, 32])], vec![5], 2).is_err());

        // Wrong image geometry is rejected before any step.
        let tiny = TensorDataset::new(vec![Tensor::zeros(&[3, 16, 16])], vec![0], 2).unwrap();
        assert!(matches!(
            train(&mut model, &tiny, &tiny, &TrainingConfig::default()),
            Err(TrainError::SampleShape { .. })
        ));
    }
}
