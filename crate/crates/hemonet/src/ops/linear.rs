//! Fully connected layer.

use super::OpError;
use crate::tape::{GradTape, Var};
use crate::tensor::{matmul_nn, matmul_nt, matmul_tn, Element, ShapeError, Tensor};

/// Affine map `y = x W^T + b` for `x: [N, D]`, `weights: [M, D]`,
/// optional `bias: [M]`, producing `[N, M]`.
pub fn dense<E: Element>(
    tape: &GradTape<E>,
    x: Var,
    weights: Var,
    bias: Option<Var>,
) -> Result<Var, OpError> {
    let x_needs = tape.needs_grad(x);
    let w_needs = tape.needs_grad(weights);
    let b_needs = bias.map(|b| tape.needs_grad(b)).unwrap_or(false);

    let (value, dims, w_saved, x_saved) = {
        let xv = tape.value(x);
        let wv = tape.value(weights);
        xv.expect_rank(2)?;
        wv.expect_rank(2)?;
        let (n, d) = (xv.dim(0), xv.dim(1));
        let (m, wd) = (wv.dim(0), wv.dim(1));
        if wd != d {
            return Err(ShapeError::DimensionMismatch {
                what: "dense inner extent",
                expected: d,
                actual: wd,
            }
            .into());
        }
        let mut out = vec![E::zero(); n * m];
        if let Some(b) = bias {
            let bv = tape.value(b);
            if bv.shape() != [m] {
                return Err(ShapeError::DimensionMismatch {
                    what: "dense bias length",
                    expected: m,
                    actual: bv.len(),
                }
                .into());
            }
            for row in out.chunks_mut(m) {
                row.copy_from_slice(bv.data());
            }
        }
        matmul_nt(xv.data(), wv.data(), n, d, m, &mut out);
        let w_saved = if x_needs { Some(wv.clone()) } else { None };
        let x_saved = if w_needs { Some(xv.clone()) } else { None };
        (Tensor::from_vec(&[n, m], out)?, (n, d, m), w_saved, x_saved)
    };

    let (n, d, m) = dims;
    let mut parents = vec![x, weights];
    if let Some(b) = bias {
        parents.push(b);
    }
    Ok(tape.push_op(value, &parents, move |g| {
        let mut contributions = Vec::new();
        if let Some(wv) = &w_saved {
            let mut dx = vec![E::zero(); n * d];
            matmul_nn(g.data(), wv.data(), n, m, d, &mut dx);
            contributions.push((x, Tensor::from_vec(&[n, d], dx).expect("shape")));
        }
        if let Some(xv) = &x_saved {
            let mut dw = vec![E::zero(); m * d];
            matmul_tn(g.data(), xv.data(), m, n, d, &mut dw);
            contributions.push((weights, Tensor::from_vec(&[m, d], dw).expect("shape")));
        }
        if b_needs {
            let mut db = vec![E::zero(); m];
            for row in g.data().chunks(m) {
                for (acc, &v) in db.iter_mut().zip(row) {
                    *acc = *acc + v;
                }
            }
            contributions.push((
                bias.expect("bias var present"),
                Tensor::from_vec(&[m], db).expect("shape"),
            ));
        }
        contributions
    }))
}
