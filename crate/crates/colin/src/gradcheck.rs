//! Independent gradient oracles: central finite differences, and the
//! first-order weight-update experiments for the factored parameterization.

use serde::Serialize;

use crate::adapter::{adapter_backward, adapter_forward, orthogonal_loss, ColinAdapter};
use crate::error::{ColinError, Result};
use crate::linalg::{svd, Matrix, Rng};

pub const FD_STEP: f64 = 1e-6;
pub const FD_REL_TOL: f64 = 1e-5;

/// Central differences `(f(x + h e_i) - f(x - h e_i)) / 2h` with the step
/// scaled per coordinate by `max(1, |x_i|)`.
pub fn fd_gradient<F>(f: F, params: &[f64], h_base: f64) -> Result<Vec<f64>>
where
    F: Fn(&[f64]) -> f64,
{
    let mut grad = Vec::with_capacity(params.len());
    let mut work = params.to_vec();
    for i in 0..params.len() {
        let h = h_base * params[i].abs().max(1.0);
        work[i] = params[i] + h;
        let fp = f(&work);
        work[i] = params[i] - h;
        let fm = f(&work);
        work[i] = params[i];
        if !fp.is_finite() || !fm.is_finite() {
            return Err(ColinError::NonFinite { index: i });
        }
        grad.push((fp - fm) / (2.0 * h));
    }
    Ok(grad)
}

/// Relative error with denominator `max(|analytic|, |numeric|, 1e-8)`.
pub fn rel_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

/// Finite-difference verdict for one parameter group.
#[derive(Debug, Clone, Serialize)]
pub struct FdEntry {
    pub name: String,
    pub max_rel_error: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct FdReport {
    pub seed: u64,
    pub h: f64,
    pub tolerance: f64,
    pub entries: Vec<FdEntry>,
    pub pass: bool,
}

impl FdReport {
    pub fn worst(&self) -> f64 {
        self.entries
            .iter()
            .fold(0.0f64, |m, e| m.max(e.max_rel_error))
    }
}

fn flatten(adapter: &ColinAdapter) -> Vec<f64> {
    let mut v = Vec::new();
    v.extend_from_slice(adapter.p_down.data());
    v.extend_from_slice(adapter.q_down.data());
    v.extend_from_slice(adapter.p_up.data());
    v.extend_from_slice(adapter.q_up.data());
    for k in &adapter.kernels {
        v.extend_from_slice(k.data());
    }
    v.extend_from_slice(&adapter.b_down);
    v.extend_from_slice(&adapter.b_up);
    v.extend_from_slice(adapter.dw_kernel.data());
    v.extend_from_slice(&adapter.dw_bias);
    v
}

fn unflatten(template: &ColinAdapter, flat: &[f64]) -> ColinAdapter {
    let mut a = template.clone();
    let mut pos = 0;
    let mut take = |dst: &mut [f64]| {
        dst.copy_from_slice(&flat[pos..pos + dst.len()]);
        pos += dst.len();
    };
    take(a.p_down.data_mut());
    take(a.q_down.data_mut());
    take(a.p_up.data_mut());
    take(a.q_up.data_mut());
    for k in &mut a.kernels {
        take(k.data_mut());
    }
    take(&mut a.b_down);
    take(&mut a.b_up);
    take(a.dw_kernel.data_mut());
    take(&mut a.dw_bias);
    assert_eq!(pos, flat.len());
    a
}

/// Group boundaries matching `flatten`, for per-field reporting.
fn group_spans(a: &ColinAdapter) -> Vec<(String, usize)> {
    let mut spans = vec![
        ("p_down".to_string(), a.beta * a.h),
        ("q_down".to_string(), a.beta * a.d),
        ("p_up".to_string(), a.beta * a.d),
        ("q_up".to_string(), a.beta * a.h),
    ];
    for i in 0..a.alpha {
        spans.push((format!("kernel_{i}"), a.beta * a.beta));
    }
    spans.push(("b_down".to_string(), a.h));
    spans.push(("b_up".to_string(), a.d));
    spans.push(("dw_kernel".to_string(), a.h * 3));
    spans.push(("dw_bias".to_string(), a.h));
    spans
}

/// Check every analytic adapter gradient (parameters, input, orthogonality)
/// against central finite differences on a seeded random configuration.
/// The loss is the sum of squared deviations from a fixed random target,
/// whose upstream gradient is `2 (y - target)`.
pub fn check_adapter_gradients(
    d: usize,
    h: usize,
    beta: usize,
    alpha: usize,
    tokens: usize,
    seed: u64,
) -> Result<FdReport> {
    let mut rng = Rng::new(seed);
    let adapter = ColinAdapter::random(d, h, beta, alpha, &mut rng)?;
    let x = Matrix::kaiming_uniform(tokens, d, &mut rng);
    let target = Matrix::kaiming_uniform(tokens, d, &mut rng);

    let task_loss = |a: &ColinAdapter, input: &Matrix| -> f64 {
        let (y, _) = adapter_forward(a, input).unwrap();
        y.sub(&target)
            .unwrap()
            .data()
            .iter()
            .map(|v| v * v)
            .sum::<f64>()
    };

    let (y, cache) = adapter_forward(&adapter, &x)?;
    let d_y = y.sub(&target)?.scale(2.0);
    let grads = adapter_backward(&adapter, &cache, &d_y)?;

    let mut analytic = Vec::new();
    analytic.extend_from_slice(grads.p_down.data());
    analytic.extend_from_slice(grads.q_down.data());
    analytic.extend_from_slice(grads.p_up.data());
    analytic.extend_from_slice(grads.q_up.data());
    for k in &grads.kernels {
        analytic.extend_from_slice(k.data());
    }
    analytic.extend_from_slice(&grads.b_down);
    analytic.extend_from_slice(&grads.b_up);
    analytic.extend_from_slice(grads.dw_kernel.data());
    analytic.extend_from_slice(&grads.dw_bias);

    let flat = flatten(&adapter);
    let numeric = fd_gradient(
        |p| task_loss(&unflatten(&adapter, p), &x),
        &flat,
        FD_STEP,
    )?;

    let mut entries = Vec::new();
    let mut pos = 0;
    for (name, len) in group_spans(&adapter) {
        let worst = (pos..pos + len)
            .map(|i| rel_error(analytic[i], numeric[i]))
            .fold(0.0f64, f64::max);
        entries.push(FdEntry {
            name,
            max_rel_error: worst,
        });
        pos += len;
    }

    // input gradient
    let numeric_input = fd_gradient(
        |p| task_loss(&adapter, &Matrix::from_vec(tokens, d, p.to_vec())),
        x.data(),
        FD_STEP,
    )?;
    let worst_input = grads
        .d_input
        .data()
        .iter()
        .zip(&numeric_input)
        .map(|(&a, &n)| rel_error(a, n))
        .fold(0.0f64, f64::max);
    entries.push(FdEntry {
        name: "d_input".to_string(),
        max_rel_error: worst_input,
    });

    // orthogonal-loss gradients, restricted to the four factor blocks
    let (_, ortho_grads) = orthogonal_loss(&adapter)?;
    let factor_len =
        adapter.beta * (2 * adapter.h + 2 * adapter.d);
    let numeric_ortho = fd_gradient(
        |p| {
            let a = unflatten(&adapter, p);
            orthogonal_loss(&a).unwrap().0
        },
        &flat,
        FD_STEP,
    )?;
    let mut ortho_analytic = Vec::new();
    ortho_analytic.extend_from_slice(ortho_grads.p_down.data());
    ortho_analytic.extend_from_slice(ortho_grads.q_down.data());
    ortho_analytic.extend_from_slice(ortho_grads.p_up.data());
    ortho_analytic.extend_from_slice(ortho_grads.q_up.data());
    let worst_ortho = ortho_analytic
        .iter()
        .zip(&numeric_ortho[..factor_len])
        .map(|(&a, &n)| rel_error(a, n))
        .fold(0.0f64, f64::max);
    entries.push(FdEntry {
        name: "orthogonal_loss_factors".to_string(),
        max_rel_error: worst_ortho,
    });

    let worst = entries.iter().fold(0.0f64, |m, e| m.max(e.max_rel_error));
    Ok(FdReport {
        seed,
        h: FD_STEP,
        tolerance: FD_REL_TOL,
        entries,
        pass: worst <= FD_REL_TOL,
    })
}

/// One point of the learning-rate sweep: how far the factored update
/// deviates from its first-order prediction.
#[derive(Debug, Clone, Serialize)]
pub struct DeltaWReport {
    pub eta: f64,
    /// `||dW_actual - dW_predicted||_F / ||dW_actual||_F`
    pub residual: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct DeltaWSweep {
    pub m: usize,
    pub k: usize,
    pub n: usize,
    pub seed: u64,
    pub points: Vec<DeltaWReport>,
    /// Least-squares slope of residual vs eta over the sweep.
    pub slope: f64,
}

/// Factored-update experiment with `W = P Q`, `P` m x k and `Q` k x n, and
/// the quadratic loss `||W_target - P Q||_F^2 / 2`. For each eta, takes one
/// simultaneous gradient step on `P` and `Q` and compares the realized
/// weight change against `-eta (grad_W Q^T Q + P P^T grad_W)`.
pub fn delta_w_experiment(
    m: usize,
    k: usize,
    n: usize,
    eta_list: &[f64],
    seed: u64,
) -> Result<DeltaWSweep> {
    let mut rng = Rng::new(seed);
    let p = Matrix::kaiming_uniform(m, k, &mut rng);
    let q = Matrix::kaiming_uniform(k, n, &mut rng);
    let target = Matrix::kaiming_uniform(m, n, &mut rng);

    let mut points = Vec::with_capacity(eta_list.len());
    for &eta in eta_list {
        let r = delta_w_step(&p, &q, &target, eta)?;
        points.push(DeltaWReport {
            eta,
            residual: r.0,
        });
    }
    // least-squares slope through the origin-free fit
    let nf = points.len() as f64;
    let mean_x = points.iter().map(|p| p.eta).sum::<f64>() / nf;
    let mean_y = points.iter().map(|p| p.residual).sum::<f64>() / nf;
    let num: f64 = points
        .iter()
        .map(|p| (p.eta - mean_x) * (p.residual - mean_y))
        .sum();
    let den: f64 = points.iter().map(|p| (p.eta - mean_x).powi(2)).sum();
    let slope = if den > 0.0 { num / den } else { 0.0 };
    Ok(DeltaWSweep {
        m,
        k,
        n,
        seed,
        points,
        slope,
    })
}

/// Returns `(relative residual, ||dW_actual||, ||grad_P|| * ||grad_Q||)`.
fn delta_w_step(
    p: &Matrix,
    q: &Matrix,
    target: &Matrix,
    eta: f64,
) -> Result<(f64, f64, f64)> {
    let w = p.matmul(q)?;
    let grad_w = w.sub(target)?; // gradient of ||target - PQ||^2 / 2
    let grad_p = grad_w.matmul(&q.transpose())?;
    let grad_q = p.transpose().matmul(&grad_w)?;

    let p_next = p.sub(&grad_p.scale(eta))?;
    let q_next = q.sub(&grad_q.scale(eta))?;
    let dw_actual = p_next.matmul(&q_next)?.sub(&w)?;

    let pred = grad_w
        .matmul(&q.transpose().matmul(q)?)?
        .add(&p.matmul(&p.transpose())?.matmul(&grad_w)?)?
        .scale(-eta);
    let diff = dw_actual.sub(&pred)?;
    let actual_norm = dw_actual.frobenius_norm();
    let residual = if actual_norm > 0.0 {
        diff.frobenius_norm() / actual_norm
    } else {
        diff.frobenius_norm()
    };
    Ok((
        residual,
        actual_norm,
        grad_p.frobenius_norm() * grad_q.frobenius_norm(),
    ))
}

/// Raw first-order deviation for the property
/// `||dW_actual + eta (grad_W Q^T Q + P P^T grad_W)|| <= C eta^2 ||grad_P|| ||grad_Q||`.
pub fn delta_w_bound_ratio(
    m: usize,
    k: usize,
    n: usize,
    eta: f64,
    seed: u64,
) -> Result<f64> {
    let mut rng = Rng::new(seed);
    let p = Matrix::kaiming_uniform(m, k, &mut rng);
    let q = Matrix::kaiming_uniform(k, n, &mut rng);
    let target = Matrix::kaiming_uniform(m, n, &mut rng);
    let (residual, actual_norm, grad_prod) = delta_w_step(&p, &q, &target, eta)?;
    let abs_dev = residual * actual_norm;
    Ok(abs_dev / (eta * eta * grad_prod))
}

/// Single-step loss decrease for well- and ill-conditioned factors at the
/// same learning rate, plus the first-order trace identity residual.
#[derive(Debug, Clone, Serialize)]
pub struct EfficiencyProbe {
    pub eta: f64,
    pub dl_orthonormal: f64,
    pub dl_ill_conditioned: f64,
    pub identity_residual_orthonormal: f64,
    pub identity_residual_ill_conditioned: f64,
}

pub fn orthogonality_efficiency_probe(
    m: usize,
    k: usize,
    n: usize,
    eta: f64,
    seed: u64,
) -> Result<EfficiencyProbe> {
    let mut rng = Rng::new(seed);
    // orthonormal columns of P (m x k) and rows of Q (k x n) from SVDs
    let p0 = svd(&Matrix::kaiming_uniform(m, k, &mut rng))?.u;
    let q0 = svd(&Matrix::kaiming_uniform(k, n, &mut rng))?.v.transpose();
    let target = Matrix::kaiming_uniform(m, n, &mut rng);

    let probe = |p: &Matrix, q: &Matrix| -> Result<(f64, f64)> {
        let loss = |p: &Matrix, q: &Matrix| -> Result<f64> {
            Ok(target.sub(&p.matmul(q)?)?.frobenius_norm().powi(2) / 2.0)
        };
        let w = p.matmul(q)?;
        let grad_w = w.sub(&target)?;
        let grad_p = grad_w.matmul(&q.transpose())?;
        let grad_q = p.transpose().matmul(&grad_w)?;
        let p_next = p.sub(&grad_p.scale(eta))?;
        let q_next = q.sub(&grad_q.scale(eta))?;
        let dl_actual = loss(&p_next, &q_next)? - loss(p, q)?;
        // first-order identity: dL = -eta tr(gW^T (gW Q^T Q + P P^T gW))
        let pred_mat = grad_w
            .matmul(&q.transpose().matmul(q)?)?
            .add(&p.matmul(&p.transpose())?.matmul(&grad_w)?)?;
        let dl_pred: f64 = grad_w
            .data()
            .iter()
            .zip(pred_mat.data())
            .map(|(a, b)| a * b)
            .sum::<f64>()
            * -eta;
        Ok((dl_actual, (dl_actual - dl_pred).abs()))
    };

    let (dl_a, res_a) = probe(&p0, &q0)?;
    let (dl_b, res_b) = probe(&p0.scale(10.0), &q0.scale(0.1))?;
    Ok(EfficiencyProbe {
        eta,
        dl_orthonormal: dl_a,
        dl_ill_conditioned: dl_b,
        identity_residual_orthonormal: res_a,
        identity_residual_ill_conditioned: res_b,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fd_on_quadratic() {
        let theta = [0.5, -1.25, 3.0];
        let g = fd_gradient(|p| p.iter().map(|v| v * v).sum(), &theta, 1e-6).unwrap();
        for (gi, ti) in g.iter().zip(&theta) {
            assert!(rel_error(*gi, 2.0 * ti) <= 1e-8);
        }
    }

    #[test]
    fn fd_on_constant_is_zero() {
        let g = fd_gradient(|_| 7.5, &[1.0, 2.0, 3.0], 1e-6).unwrap();
        assert!(g.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn fd_on_products_tight() {
        // f = x0 * x1 * x2
        let theta = [1.5, -2.0, 0.75];
        let g = fd_gradient(|p| p[0] * p[1] * p[2], &theta, 1e-6).unwrap();
        let expect = [
            theta[1] * theta[2],
            theta[0] * theta[2],
            theta[0] * theta[1],
        ];
        for (gi, ei) in g.iter().zip(&expect) {
            assert!(rel_error(*gi, *ei) <= 1e-8);
        }
    }

    #[test]
    fn fd_reports_non_finite_coordinate() {
        // finite at the base point and under coordinate-0 perturbations;
        // NaN only when coordinate 1 is stepped below -5e-7
        let err = fd_gradient(|p| p[0] + (p[1] + 5e-7).ln(), &[1.0, 0.0], 1e-6).unwrap_err();
        assert!(matches!(err, ColinError::NonFinite { index: 1 }));
    }

    #[test]
    fn adapter_gradients_match_fd_on_reference_config() {
        let report = check_adapter_gradients(8, 6, 3, 2, 4, 5).unwrap();
        assert!(report.pass, "worst {:.3e}", report.worst());
    }

    #[test]
    fn delta_w_zero_gradient_at_planted_optimum() {
        let mut rng = Rng::new(3);
        let p = Matrix::kaiming_uniform(5, 3, &mut rng);
        let q = Matrix::kaiming_uniform(3, 6, &mut rng);
        let target = p.matmul(&q).unwrap();
        let (residual, actual, _) = delta_w_step(&p, &q, &target, 1e-3).unwrap();
        assert_eq!(actual, 0.0);
        assert_eq!(residual, 0.0);
    }

    #[test]
    fn residual_roughly_halves_with_eta() {
        let sweep = delta_w_experiment(6, 4, 8, &[1e-3, 5e-4, 2.5e-4], 7).unwrap();
        for w in sweep.points.windows(2) {
            let ratio = w[1].residual / w[0].residual;
            assert!((0.4..=0.6).contains(&ratio), "ratio {ratio}");
        }
    }

    #[test]
    fn square_identity_factors_give_minus_two_eta_gradient() {
        // P = Q = I_k, square full rank: dW = -2 eta gradW + eta^2 gradW^2
        let k = 6;
        let eta = 1e-4;
        let mut rng = Rng::new(11);
        let p = Matrix::identity(k);
        let q = Matrix::identity(k);
        let target = Matrix::kaiming_uniform(k, k, &mut rng);
        let w = p.matmul(&q).unwrap();
        let grad_w = w.sub(&target).unwrap();
        let grad_p = grad_w.matmul(&q.transpose()).unwrap();
        let grad_q = p.transpose().matmul(&grad_w).unwrap();
        let dw = p
            .sub(&grad_p.scale(eta))
            .unwrap()
            .matmul(&q.sub(&grad_q.scale(eta)).unwrap())
            .unwrap()
            .sub(&w)
            .unwrap();
        let ideal = grad_w.scale(-2.0 * eta);
        let dev = dw.sub(&ideal).unwrap().frobenius_norm();
        // the neglected term is eta^2 gradW gradW
        let bound = eta * eta * grad_w.frobenius_norm().powi(2);
        assert!(dev <= bound * (1.0 + 1e-9), "dev {dev:e} bound {bound:e}");
    }

    #[test]
    fn first_order_bound_constant_under_1_5() {
        for seed in 0..10 {
            let ratio = delta_w_bound_ratio(7, 3, 9, 1e-3, seed).unwrap();
            assert!(ratio <= 1.5, "seed {seed} ratio {ratio}");
        }
    }

    #[test]
    fn probe_orthonormal_square_case_matches_minus_two_eta_norm() {
        let eta = 1e-5;
        let p = orthogonality_efficiency_probe(8, 8, 8, eta, 2).unwrap();
        // for square orthonormal factors dL = -2 eta ||gradW||^2 + O(eta^2);
        // the identity residual must be tiny relative to |dL|
        assert!(p.dl_orthonormal < 0.0);
        assert!(p.identity_residual_orthonormal <= 1e-3 * p.dl_orthonormal.abs());
    }

    #[test]
    fn probe_identity_residual_shrinks_linearly() {
        let a = orthogonality_efficiency_probe(6, 3, 7, 1e-3, 4).unwrap();
        let b = orthogonality_efficiency_probe(6, 3, 7, 5e-4, 4).unwrap();
        // residual is O(eta^2): quartering, not halving, when eta halves
        let ratio = b.identity_residual_orthonormal / a.identity_residual_orthonormal;
        assert!(ratio < 0.35, "ratio {ratio}");
    }

    #[test]
    fn probe_zero_eta_changes_nothing() {
        let p = orthogonality_efficiency_probe(5, 3, 6, 0.0, 1).unwrap();
        assert_eq!(p.dl_orthonormal, 0.0);
        assert_eq!(p.dl_ill_conditioned, 0.0);
    }
}
