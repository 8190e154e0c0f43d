//! Soft-voting ensembles: member class-probability matrices are fused by
//! elementwise mean, by a fixed convex weighting, or by a trained linear map
//! over the concatenated member probabilities.

use crate::metrics::argmax_label;
use crate::ops;
use crate::optim::{Optimizer, OptimizerKind};
use crate::tape::GradTape;
use crate::tensor::Tensor;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum EnsembleError {
    #[error("an ensemble needs at least two members, got {0}")]
    TooFewMembers(usize),
    #[error("member {index} has shape {got:?}, expected {expected:?}")]
    MemberShape {
        index: usize,
        expected: Vec<usize>,
        got: Vec<usize>,
    },
    #[error("weights must be non-negative and sum to 1 (sum was {sum})")]
    BadWeights { sum: f64 },
    #[error("weight count {weights} does not match member count {members}")]
    WeightCount { weights: usize, members: usize },
    #[error("probability csv: {0}")]
    MalformedCsv(String),
}

/// Fusion rule for combining member probabilities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum FusionSpec {
    /// Arithmetic mean of the member probability rows.
    Mean,
    /// Convex combination with fixed weights (non-negative, summing to 1).
    Weighted { weights: Vec<f32> },
    /// Linear map on concatenated member probabilities, then softmax; fit on
    /// labeled data.
    TrainedLinear,
}

fn validate_members(members: &[Tensor<f32>]) -> Result<(usize, usize), EnsembleError> {
    if members.len() < 2 {
        return Err(EnsembleError::TooFewMembers(members.len()));
    }
    let expected = members[0].shape().to_vec();
    for (index, m) in members.iter().enumerate() {
        if m.shape() != expected.as_slice() {
            return Err(EnsembleError::MemberShape {
                index,
                expected,
                got: m.shape().to_vec(),
            });
        }
    }
    Ok((expected[0], expected[1]))
}

/// Elementwise mean of member probability matrices.
pub fn fuse_mean(members: &[Tensor<f32>]) -> Result<Tensor<f32>, EnsembleError> {
    let _ = validate_members(members)?;
    let mut out = members[0].clone();
    for m in &members[1..] {
        out.add_assign(m);
    }
    out.scale(1.0 / members.len() as f32);
    Ok(out)
}

/// Convex combination of member probabilities.
pub fn fuse_weighted(
    members: &[Tensor<f32>],
    weights: &[f32],
) -> Result<Tensor<f32>, EnsembleError> {
    let _ = validate_members(members)?;
    if weights.len() != members.len() {
        return Err(EnsembleError::WeightCount {
            weights: weights.len(),
            members: members.len(),
        });
    }
    let sum: f64 = weights.iter().map(|&w| w as f64).sum();
    if weights.iter().any(|&w| w < 0.0) || (sum - 1.0).abs() > 1e-6 {
        return Err(EnsembleError::BadWeights { sum });
    }
    let mut out = Tensor::zeros(members[0].shape());
    for (m, &w) in members.iter().zip(weights) {
        for (o, &v) in out.data_mut().iter_mut().zip(m.data()) {
            *o += w * v;
        }
    }
    Ok(out)
}

/// A fitted linear fusion head: `softmax(W * concat(members) + b)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearFusion {
    /// `[K, K * M]`.
    pub weights: Tensor<f32>,
    /// `[K]`.
    pub bias: Tensor<f32>,
}

fn concat_members(members: &[Tensor<f32>]) -> Tensor<f32> {
    let (n, k) = (members[0].dim(0), members[0].dim(1));
    let m = members.len();
    let mut data = vec![0.0f32; n * k * m];
    for row in 0..n {
        for (mi, member) in members.iter().enumerate() {
            let src = &member.data()[row * k..(row + 1) * k];
            let dst = row * k * m + mi * k;
            data[dst..dst + k].copy_from_slice(src);
        }
    }
    Tensor::from_vec(&[n, k * m], data).expect("shape")
}

impl LinearFusion {
    /// Fits the linear map by full-batch gradient descent on the
    /// cross-entropy of the fused prediction. The fit is deterministic:
    /// fixed start, fixed iteration count, no sampling.
    pub fn fit(
        members: &[Tensor<f32>],
        labels: &[usize],
        iterations: usize,
    ) -> Result<Self, EnsembleError> {
        let (n, k) = validate_members(members)?;
        assert_eq!(labels.len(), n, "one label per sample");
        let features = concat_members(members);
        let mut onehot = Tensor::zeros(&[n, k]);
        for (row, &label) in labels.iter().enumerate() {
            onehot.data_mut()[row * k + label] = 1.0;
        }

        // Identity-like start: average the member blocks.
        let m = members.len();
        let mut weights = Tensor::zeros(&[k, k * m]);
        for class in 0..k {
            for mi in 0..m {
                weights.data_mut()[class * k * m + mi * k + class] = 1.0 / m as f32;
            }
        }
        let mut bias = Tensor::zeros(&[k]);

        let mut optimizer = Optimizer::new(OptimizerKind::Adam);
        let mut store = crate::nn::ParamStore::new();
        let wid = store.add("fusion.weight", weights, crate::nn::ParamKind::Weight);
        let bid = store.add("fusion.bias", bias, crate::nn::ParamKind::Weight);
        for _ in 0..iterations {
            let tape = GradTape::new();
            let x = tape.constant(features.clone());
            let w = tape.leaf(store.value(wid).clone(), true);
            let b = tape.leaf(store.value(bid).clone(), true);
            let logits = ops::dense(&tape, x, w, Some(b)).expect("shapes fixed");
            let probs = ops::softmax(&tape, logits).expect("rank 2");
            let targets = tape.constant(onehot.clone());
            let loss = ops::cross_entropy(&tape, probs, targets).expect("shapes fixed");
            tape.backward(loss).expect("scalar loss");
            let grads: Vec<_> = [(wid, w), (bid, b)]
                .into_iter()
                .filter_map(|(id, var)| tape.grad(var).map(|g| (id, g)))
                .collect();
            optimizer.step(&mut store, &grads, 0.05);
        }
        weights = store.value(wid).clone();
        bias = store.value(bid).clone();
        Ok(Self { weights, bias })
    }

    /// Applies the fitted map to member probabilities.
    pub fn fuse(&self, members: &[Tensor<f32>]) -> Result<Tensor<f32>, EnsembleError> {
        let _ = validate_members(members)?;
        let features = concat_members(members);
        let tape = GradTape::new();
        let x = tape.constant(features);
        let w = tape.constant(self.weights.clone());
        let b = tape.constant(self.bias.clone());
        let logits = ops::dense(&tape, x, w, Some(b)).expect("shapes fixed");
        let probs = ops::softmax(&tape, logits).expect("rank 2");
        Ok(tape.value_cloned(probs))
    }
}

/// Argmax class per row.
pub fn hard_labels(probs: &Tensor<f32>) -> Vec<usize> {
    let k = probs.dim(1);
    probs.data().chunks(k).map(argmax_label).collect()
}

/// Fraction of rows whose argmax matches the label.
pub fn accuracy_of(probs: &Tensor<f32>, labels: &[usize]) -> f64 {
    let predictions = hard_labels(probs);
    let correct = predictions
        .iter()
        .zip(labels)
        .filter(|(p, a)| p == a)
        .count();
    correct as f64 / labels.len().max(1) as f64
}

/// Probability CSV: `sample_id,p_0,...,p_{K-1}` per row. Float formatting is
/// shortest-round-trip, so parsing recovers the exact `f32` values.
pub fn probs_to_csv(sample_ids: &[String], probs: &Tensor<f32>) -> String {
    let k = probs.dim(1);
    let mut out = String::from("sample_id");
    for i in 0..k {
        out.push_str(&format!(",p_{i}"));
    }
    out.push('\n');
    for (id, row) in sample_ids.iter().zip(probs.data().chunks(k)) {
        out.push_str(id);
        for v in row {
            out.push(',');
            out.push_str(&v.to_string());
        }
        out.push('\n');
    }
    out
}

/// Parses a probability CSV back into ids and a `[N, K]` tensor. `#` comment
/// lines are ignored.
pub fn probs_from_csv(text: &str) -> Result<(Vec<String>, Tensor<f32>), EnsembleError> {
    let mut lines = text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'));
    let header = lines
        .next()
        .ok_or_else(|| EnsembleError::MalformedCsv("missing header".into()))?;
    let k = header.split(',').count().saturating_sub(1);
    if k == 0 {
        return Err(EnsembleError::MalformedCsv(
            "header has no probability columns".into(),
        ));
    }
    let mut ids = Vec::new();
    let mut data = Vec::new();
    for line in lines {
        let mut cells = line.split(',');
        let id = cells
            .next()
            .ok_or_else(|| EnsembleError::MalformedCsv("empty row".into()))?;
        ids.push(id.to_string());
        let mut count = 0usize;
        for cell in cells {
            let v: f32 = cell
                .trim()
                .parse()
                .map_err(|_| EnsembleError::MalformedCsv(format!("bad float `{cell}`")))?;
            data.push(v);
            count += 1;
        }
        if count != k {
            return Err(EnsembleError::MalformedCsv(format!(
                "row `{id}` has {count} probabilities, expected {k}"
            )));
        }
    }
    let n = ids.len();
    Ok((
        ids,
        Tensor::from_vec(&[n, k], data).map_err(|e| EnsembleError::MalformedCsv(e.to_string()))?,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rows(values: &[[f32; 2]]) -> Tensor<f32> {
        Tensor::from_vec(&[values.len(), 2], values.concat()).unwrap()
    }

    #[test]
    fn mean_of_identical_members_is_identity() {
        let member = rows(&[[0.3, 0.7], [0.9, 0.1]]);
        let fused = fuse_mean(&[member.clone(), member.clone()]).unwrap();
        assert_eq!(fused.data(), member.data());
    }

    #[test]
    fn mean_of_opposed_members_is_uniform() {
        let fused = fuse_mean(&[rows(&[[1.0, 0.0]]), rows(&[[0.0, 1.0]])]).unwrap();
        assert_eq!(fused.data(), &[0.5, 0.5]);
    }

    #[test]
    fn three_member_mean_hand_case() {
        let fused = fuse_mean(&[
            rows(&[[0.6, 0.4]]),
            rows(&[[0.7, 0.3]]),
            rows(&[[0.2, 0.8]]),
        ])
        .unwrap();
        assert!((fused.data()[0] - 0.5).abs() < 1e-6);
        assert!((fused.data()[1] - 0.5).abs() < 1e-6);
    }

    #[test]
    fn member_validation() {
        let a = rows(&[[1.0, 0.0]]);
        assert!(matches!(
            fuse_mean(std::slice::from_ref(&a)),
            Err(EnsembleError::TooFewMembers(1))
        ));
        let b = Tensor::from_vec(&[1, 3], vec![0.2, 0.3, 0.5]).unwrap();
        assert!(matches!(
            fuse_mean(&[a.clone(), b]),
            Err(EnsembleError::MemberShape { index: 1, .. })
        ));
    }

    #[test]
    fn weighted_fusion_validates_and_combines() {
        let a = rows(&[[1.0, 0.0]]);
        let b = rows(&[[0.0, 1.0]]);
        let fused = fuse_weighted(&[a.clone(), b.clone()], &[0.25, 0.75]).unwrap();
        assert_eq!(fused.data(), &[0.25, 0.75]);
        assert!(fuse_weighted(&[a.clone(), b.clone()], &[0.5, 0.4]).is_err());
        assert!(fuse_weighted(&[a.clone(), b.clone()], &[1.5, -0.5]).is_err());
        assert!(fuse_weighted(&[a, b], &[1.0]).is_err());
    }

    #[test]
    fn fused_rows_remain_distributions() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let random_probs = |rng: &mut ChaCha8Rng| {
            let mut data = Vec::new();
            for _ in 0..8 {
                let a: f32 = rng.random_range(0.0..1.0);
                let b: f32 = rng.random_range(0.0..1.0);
                let c: f32 = rng.random_range(0.0..1.0);
                let sum = a + b + c;
                data.extend([a / sum, b / sum, c / sum]);
            }
            Tensor::from_vec(&[8, 3], data).unwrap()
        };
        let members = [
            random_probs(&mut rng),
            random_probs(&mut rng),
            random_probs(&mut rng),
        ];
        for fused in [
            fuse_mean(&members).unwrap(),
            fuse_weighted(&members, &[0.2, 0.5, 0.3]).unwrap(),
        ] {
            for row in fused.data().chunks(3) {
                let sum: f32 = row.iter().sum();
                assert!((sum - 1.0).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn trained_linear_fusion_learns_to_trust_the_good_member() {
        // Member 0 is always right; member 1 is always wrong.
        let n = 64usize;
        let labels: Vec<usize> = (0..n).map(|i| i % 2).collect();
        let mut good = Tensor::zeros(&[n, 2]);
        let mut bad = Tensor::zeros(&[n, 2]);
        for (i, &l) in labels.iter().enumerate() {
            good.data_mut()[i * 2 + l] = 0.9;
            good.data_mut()[i * 2 + (1 - l)] = 0.1;
            bad.data_mut()[i * 2 + (1 - l)] = 0.9;
            bad.data_mut()[i * 2 + l] = 0.1;
        }
        let members = [good, bad];
        let fusion = LinearFusion::fit(&members, &labels, 200).unwrap();
        let fused = fusion.fuse(&members).unwrap();
        assert!(accuracy_of(&fused, &labels) > 0.99);
    }

    #[test]
    fn probability_csv_round_trips_bit_exactly() {
        let probs = rows(&[[0.1234567, 0.8765433], [1.0 / 3.0, 2.0 / 3.0]]);
        let ids = vec!["a/x.png".to_string(), "b/y.png".to_string()];
        let text = probs_to_csv(&ids, &probs);
        let (back_ids, back) = probs_from_csv(&text).unwrap();
        assert_eq!(back_ids, ids);
        assert_eq!(back.shape(), probs.shape());
        for (a, b) in probs.data().iter().zip(back.data()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
        assert!(probs_from_csv("").is_err());
        assert!(probs_from_csv("sample_id,p_0\nx,0.5,0.5\n").is_err());
    }
}
