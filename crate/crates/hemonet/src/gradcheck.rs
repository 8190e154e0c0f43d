//! Central finite-difference gradient checking.
//!
//! The checker re-evaluates a forward function at perturbed inputs and never
//! consults the tape's backward pass for its reference values, so it stays an
//! independent oracle for the analytic gradients. Checks are intended to run
//! in `f64`: the difference step below is far too coarse for `f32` forward
//! evaluation.

use crate::tape::{GradTape, Var};
use crate::tensor::Tensor;

/// Default central-difference step.
pub const DEFAULT_STEP: f64 = 1e-3;

/// Worst observed deviation between analytic and finite-difference gradients.
#[derive(Debug, Clone, Copy)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub max_abs_error: f64,
    /// (input index, element index) of the worst deviation.
    pub worst: (usize, usize),
}

/// Compares the tape's gradients for `inputs` against central finite
/// differences of `forward`, which must build a scalar loss from the given
/// leaf variables deterministically.
///
/// Relative error uses `|a - f| / max(|a|, |f|, 1e-6)`.
pub fn check_gradients<F>(inputs: &[Tensor<f64>], step: f64, forward: F) -> GradCheckReport
where
    F: Fn(&GradTape<f64>, &[Var]) -> Var,
{
    let eval = |tensors: &[Tensor<f64>]| -> f64 {
        let tape = GradTape::new();
        let vars: Vec<Var> = tensors.iter().map(|t| tape.constant(t.clone())).collect();
        let root = forward(&tape, &vars);
        let v = tape.value(root);
        assert_eq!(v.len(), 1, "gradient check target must be scalar");
        v.data()[0]
    };

    // Analytic pass.
    let tape = GradTape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone(), true)).collect();
    let root = forward(&tape, &vars);
    tape.backward(root).expect("scalar root");
    let analytic: Vec<Tensor<f64>> = vars
        .iter()
        .zip(inputs)
        .map(|(&v, t)| tape.grad(v).unwrap_or_else(|| Tensor::zeros(t.shape())))
        .collect();

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        max_abs_error: 0.0,
        worst: (0, 0),
    };
    let mut work: Vec<Tensor<f64>> = inputs.to_vec();
    for (ti, tensor) in inputs.iter().enumerate() {
        for ei in 0..tensor.len() {
            let original = tensor.data()[ei];
            work[ti].data_mut()[ei] = original + step;
            let plus = eval(&work);
            work[ti].data_mut()[ei] = original - step;
            let minus = eval(&work);
            work[ti].data_mut()[ei] = original;

            let fd = (plus - minus) / (2.0 * step);
            let a = analytic[ti].data()[ei];
            let abs = (a - fd).abs();
            let rel = abs / a.abs().max(fd.abs()).max(1e-6);
            if rel > report.max_rel_error {
                report.max_rel_error = rel;
                report.worst = (ti, ei);
            }
            report.max_abs_error = report.max_abs_error.max(abs);
        }
    }
    report
}
