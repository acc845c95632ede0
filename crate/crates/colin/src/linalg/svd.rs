//! One-sided Jacobi singular value decomposition.
//!
//! Rotations orthogonalize column pairs of the working matrix until every
//! pair's normalized inner product drops under `tol`. Column norms then give
//! the singular values, the normalized columns give U, and the accumulated
//! rotations give V.

use crate::error::{ColinError, Result};
use crate::linalg::Matrix;

/// Thin SVD: `a = u * diag(s) * v^T` with `r = min(m, n)`.
#[derive(Debug, Clone)]
pub struct SvdResult {
    /// m x r, orthonormal columns.
    pub u: Matrix,
    /// Singular values, descending, non-negative.
    pub s: Vec<f64>,
    /// n x r, orthonormal columns.
    pub v: Matrix,
}

pub const SVD_DEFAULT_TOL: f64 = 1e-12;
pub const SVD_DEFAULT_MAX_SWEEPS: usize = 60;

pub fn svd(a: &Matrix) -> Result<SvdResult> {
    svd_with(a, SVD_DEFAULT_TOL, SVD_DEFAULT_MAX_SWEEPS)
}

pub fn svd_with(a: &Matrix, tol: f64, max_sweeps: usize) -> Result<SvdResult> {
    assert!(a.rows() >= 1 && a.cols() >= 1, "svd of empty matrix");
    assert!(tol > 0.0);
    if a.rows() < a.cols() {
        let r = svd_with(&a.transpose(), tol, max_sweeps)?;
        return Ok(SvdResult {
            u: r.v,
            s: r.s,
            v: r.u,
        });
    }
    let (m, n) = a.shape();
    let mut b = a.clone();
    let mut v = Matrix::identity(n);

    let mut converged = false;
    let mut residual = 0.0f64;
    for _sweep in 0..max_sweeps {
        let mut rotated = false;
        residual = 0.0;
        for p in 0..n {
            for q in (p + 1)..n {
                let mut app = 0.0;
                let mut aqq = 0.0;
                let mut apq = 0.0;
                for i in 0..m {
                    let bp = b.get(i, p);
                    let bq = b.get(i, q);
                    app += bp * bp;
                    aqq += bq * bq;
                    apq += bp * bq;
                }
                let scale = (app * aqq).sqrt();
                if scale == 0.0 || apq.abs() <= tol * scale {
                    continue;
                }
                residual = residual.max(apq.abs() / scale);
                rotated = true;

                let zeta = (aqq - app) / (2.0 * apq);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let cs = 1.0 / (1.0 + t * t).sqrt();
                let sn = cs * t;
                for i in 0..m {
                    let bp = b.get(i, p);
                    let bq = b.get(i, q);
                    b.set(i, p, cs * bp - sn * bq);
                    b.set(i, q, sn * bp + cs * bq);
                }
                for i in 0..n {
                    let vp = v.get(i, p);
                    let vq = v.get(i, q);
                    v.set(i, p, cs * vp - sn * vq);
                    v.set(i, q, sn * vp + cs * vq);
                }
            }
        }
        if !rotated {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(ColinError::SvdNonConvergence {
            sweeps: max_sweeps,
            residual,
        });
    }

    // Column norms are the singular values; sort descending.
    let mut order: Vec<usize> = (0..n).collect();
    let norms: Vec<f64> = (0..n)
        .map(|j| (0..m).map(|i| b.get(i, j).powi(2)).sum::<f64>().sqrt())
        .collect();
    order.sort_by(|&x, &y| norms[y].partial_cmp(&norms[x]).unwrap());

    let mut u = Matrix::zeros(m, n);
    let mut v_sorted = Matrix::zeros(n, n);
    let mut s = Vec::with_capacity(n);
    let tiny = f64::EPSILON * norms.iter().cloned().fold(1.0f64, f64::max) * m as f64;
    for (dst, &src) in order.iter().enumerate() {
        s.push(norms[src]);
        if norms[src] > tiny {
            for i in 0..m {
                u.set(i, dst, b.get(i, src) / norms[src]);
            }
        }
        for i in 0..n {
            v_sorted.set(i, dst, v.get(i, src));
        }
    }
    // Rank-deficient case: fill zero-norm U columns with an orthonormal
    // complement so U^T U = I still holds.
    for (dst, &src) in order.iter().enumerate() {
        if norms[src] > tiny {
            continue;
        }
        fill_orthonormal_column(&mut u, dst);
    }

    Ok(SvdResult { u, s, v: v_sorted })
}

/// Gram-Schmidt a standard basis vector against the existing columns.
fn fill_orthonormal_column(u: &mut Matrix, col: usize) {
    let (m, n) = u.shape();
    for basis in 0..m {
        let mut cand = vec![0.0; m];
        cand[basis] = 1.0;
        for j in 0..n {
            if j == col {
                continue;
            }
            let dot: f64 = (0..m).map(|i| cand[i] * u.get(i, j)).sum();
            for (i, c) in cand.iter_mut().enumerate() {
                *c -= dot * u.get(i, j);
            }
        }
        let norm = cand.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-6 {
            for (i, c) in cand.iter().enumerate() {
                u.set(i, col, c / norm);
            }
            return;
        }
    }
    unreachable!("no orthonormal complement found");
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::Rng;

    fn reconstruct(r: &SvdResult) -> Matrix {
        let sv = Matrix::diag(&r.s);
        r.u.matmul(&sv).unwrap().matmul(&r.v.transpose()).unwrap()
    }

    fn gram_residual(m: &Matrix) -> f64 {
        let g = m.transpose().matmul(m).unwrap();
        g.sub(&Matrix::identity(m.cols())).unwrap().frobenius_norm()
    }

    #[test]
    fn identity_four() {
        let r = svd(&Matrix::identity(4)).unwrap();
        for &sv in &r.s {
            assert!((sv - 1.0).abs() < 1e-12);
        }
        let uv = r.u.matmul(&r.v.transpose()).unwrap();
        assert!(uv.sub(&Matrix::identity(4)).unwrap().frobenius_norm() < 1e-12);
    }

    #[test]
    fn diagonal_matrix() {
        let r = svd(&Matrix::diag(&[3.0, 1.0])).unwrap();
        assert!((r.s[0] - 3.0).abs() < 1e-12);
        assert!((r.s[1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn random_6x4_reconstruction() {
        let a = Matrix::kaiming_uniform(6, 4, &mut Rng::new(7));
        let r = svd(&a).unwrap();
        let res = reconstruct(&r).sub(&a).unwrap().frobenius_norm();
        assert!(res <= 1e-8 * a.frobenius_norm().max(1.0));
        assert!(gram_residual(&r.u) <= 1e-8);
        assert!(gram_residual(&r.v) <= 1e-8);
    }

    #[test]
    fn wide_matrix_transposes_internally() {
        let a = Matrix::kaiming_uniform(3, 9, &mut Rng::new(11));
        let r = svd(&a).unwrap();
        assert_eq!(r.u.shape(), (3, 3));
        assert_eq!(r.v.shape(), (9, 3));
        let res = reconstruct(&r).sub(&a).unwrap().frobenius_norm();
        assert!(res <= 1e-8 * a.frobenius_norm().max(1.0));
    }

    #[test]
    fn rank_deficient_still_orthonormal() {
        // two identical columns => one zero singular value
        let a = Matrix::from_rows(&[
            vec![1.0, 1.0, 2.0],
            vec![2.0, 2.0, 0.0],
            vec![3.0, 3.0, 1.0],
            vec![0.0, 0.0, 4.0],
        ]);
        let r = svd(&a).unwrap();
        assert!(gram_residual(&r.u) <= 1e-8);
        assert!(r.s[2].abs() <= 1e-10 * a.frobenius_norm());
        let res = reconstruct(&r).sub(&a).unwrap().frobenius_norm();
        assert!(res <= 1e-8 * a.frobenius_norm().max(1.0));
    }

    #[test]
    fn fifty_random_shapes_invariants() {
        let mut rng = Rng::new(99);
        for trial in 0..50 {
            let m = 2 + rng.below(9);
            let n = 2 + rng.below(9);
            let a = Matrix::kaiming_uniform(m, n, &mut rng);
            let r = svd(&a).unwrap();
            let scale = a.frobenius_norm().max(1.0);
            assert!(
                reconstruct(&r).sub(&a).unwrap().frobenius_norm() <= 1e-8 * scale,
                "trial {trial} reconstruction"
            );
            assert!(gram_residual(&r.u) <= 1e-8, "trial {trial} U");
            assert!(gram_residual(&r.v) <= 1e-8, "trial {trial} V");
            for w in r.s.windows(2) {
                assert!(w[0] >= w[1], "trial {trial} ordering");
            }
            assert!(r.s.iter().all(|&sv| sv >= 0.0));
        }
    }

    #[test]
    fn deterministic_for_fixed_input() {
        let a = Matrix::kaiming_uniform(5, 5, &mut Rng::new(21));
        let r1 = svd(&a).unwrap();
        let r2 = svd(&a).unwrap();
        assert_eq!(r1.u, r2.u);
        assert_eq!(r1.s, r2.s);
        assert_eq!(r1.v, r2.v);
    }
}
