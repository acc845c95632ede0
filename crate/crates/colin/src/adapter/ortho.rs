//! Orthogonality regularizer on the factor Grams.
//!
//! For each rectangular factor `F` (beta x m) the penalty is
//! `||F F^T - I_beta||_F^2`; its gradient is `4 (F F^T - I) F`.

use crate::error::Result;
use crate::linalg::Matrix;

use super::ColinAdapter;

/// Gradients of the orthogonal loss w.r.t. the four factor matrices.
#[derive(Debug, Clone)]
pub struct FactorGrads {
    pub p_down: Matrix,
    pub q_down: Matrix,
    pub p_up: Matrix,
    pub q_up: Matrix,
}

fn gram_penalty(f: &Matrix) -> Result<(f64, Matrix)> {
    let beta = f.rows();
    let gram = f.matmul(&f.transpose())?;
    let dev = gram.sub(&Matrix::identity(beta))?;
    let loss = dev.frobenius_norm().powi(2);
    let grad = dev.matmul(f)?.scale(4.0);
    Ok((loss, grad))
}

/// Sum of the four factor penalties plus their gradients.
pub fn orthogonal_loss(adapter: &ColinAdapter) -> Result<(f64, FactorGrads)> {
    let (l1, g1) = gram_penalty(&adapter.p_down)?;
    let (l2, g2) = gram_penalty(&adapter.q_down)?;
    let (l3, g3) = gram_penalty(&adapter.p_up)?;
    let (l4, g4) = gram_penalty(&adapter.q_up)?;
    Ok((
        l1 + l2 + l3 + l4,
        FactorGrads {
            p_down: g1,
            q_down: g2,
            p_up: g3,
            q_up: g4,
        },
    ))
}

/// `total = L0 + lambda * sum_i orthogonal_loss(adapter_i)`; the returned
/// factor gradients are already scaled by `lambda` so they merge additively
/// into the task gradients.
pub fn composite_loss(
    task_loss: f64,
    lambda: f64,
    adapters: &[&ColinAdapter],
) -> Result<(f64, Vec<FactorGrads>)> {
    let mut total = task_loss;
    let mut grads = Vec::with_capacity(adapters.len());
    for adapter in adapters {
        let (l, g) = orthogonal_loss(adapter)?;
        total += lambda * l;
        grads.push(FactorGrads {
            p_down: g.p_down.scale(lambda),
            q_down: g.q_down.scale(lambda),
            p_up: g.p_up.scale(lambda),
            q_up: g.q_up.scale(lambda),
        });
    }
    Ok((total, grads))
}
