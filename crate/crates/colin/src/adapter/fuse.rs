//! Branch fusion: collapse the multi-branch factors into dense projection
//! weights for inference.

use crate::error::Result;
use crate::linalg::{gelu, Matrix};

use super::ColinAdapter;

/// Inference-time dense form of an adapter.
#[derive(Debug, Clone, PartialEq)]
pub struct FusedAdapter {
    pub d: usize,
    pub h: usize,
    /// h x d
    pub w_down: Matrix,
    /// d x h
    pub w_up: Matrix,
    pub b_down: Vec<f64>,
    pub b_up: Vec<f64>,
    pub dw_kernel: Matrix,
    pub dw_bias: Vec<f64>,
}

pub fn fuse(adapter: &ColinAdapter) -> Result<FusedAdapter> {
    Ok(FusedAdapter {
        d: adapter.d,
        h: adapter.h,
        w_down: adapter.w_down()?,
        w_up: adapter.w_up()?,
        b_down: adapter.b_down.clone(),
        b_up: adapter.b_up.clone(),
        dw_kernel: adapter.dw_kernel.clone(),
        dw_bias: adapter.dw_bias.clone(),
    })
}

/// Same pipeline as `adapter_forward` but with precomputed dense weights.
pub fn fused_forward(fused: &FusedAdapter, x: &Matrix) -> Result<Matrix> {
    let (tokens, _) = x.shape();
    let mut h0 = x.matmul(&fused.w_down.transpose())?;
    for t in 0..tokens {
        for c in 0..fused.h {
            h0.set(t, c, h0.get(t, c) + fused.b_down[c]);
        }
    }
    let mut h2 = Matrix::zeros(tokens, fused.h);
    for t in 0..tokens {
        for c in 0..fused.h {
            let mut acc = fused.dw_bias[c];
            for j in 0..3usize {
                let src = t as isize + j as isize - 1;
                if src >= 0 && (src as usize) < tokens {
                    acc += fused.dw_kernel.get(c, j) * h0.get(src as usize, c);
                }
            }
            h2.set(t, c, gelu(acc));
        }
    }
    let mut y = h2.matmul(&fused.w_up.transpose())?;
    for t in 0..tokens {
        for j in 0..fused.d {
            y.set(t, j, y.get(t, j) + fused.b_up[j] + x.get(t, j));
        }
    }
    Ok(y)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::adapter::{adapter_forward, compose_weight};
    use crate::linalg::Rng;

    #[test]
    fn zero_adapter_fuses_to_zero_weights() {
        let a = ColinAdapter::new(5, 3, 2, 2).unwrap();
        let f = fuse(&a).unwrap();
        assert_eq!(f.w_down.max_abs(), 0.0);
        assert_eq!(f.w_up.max_abs(), 0.0);
    }

    #[test]
    fn identity_kernel_single_branch() {
        let mut rng = Rng::new(1);
        let mut a = ColinAdapter::new(6, 4, 2, 1).unwrap();
        a.p_down = Matrix::kaiming_uniform(2, 4, &mut rng);
        a.q_down = Matrix::kaiming_uniform(2, 6, &mut rng);
        a.kernels = vec![Matrix::identity(2)];
        let f = fuse(&a).unwrap();
        let expect = a.p_down.transpose().matmul(&a.q_down).unwrap();
        assert_eq!(f.w_down, expect);
    }

    #[test]
    fn fused_matches_unfused_on_random_inputs() {
        let mut rng = Rng::new(2);
        let a = ColinAdapter::random(7, 5, 3, 3, &mut rng).unwrap();
        let f = fuse(&a).unwrap();
        for _ in 0..16 {
            let x = Matrix::kaiming_uniform(4, 7, &mut rng);
            let (y1, _) = adapter_forward(&a, &x).unwrap();
            let y2 = fused_forward(&f, &x).unwrap();
            assert!(y1.sub(&y2).unwrap().max_abs() <= 1e-10);
        }
    }

    #[test]
    fn fused_weights_match_factor_summation() {
        let mut rng = Rng::new(6);
        let a = ColinAdapter::random(6, 4, 2, 4, &mut rng).unwrap();
        let f = fuse(&a).unwrap();
        let wd = compose_weight(&a.p_down, &a.kernels, &a.q_down).unwrap();
        let wu = compose_weight(&a.p_up, &a.kernels, &a.q_up).unwrap();
        assert!(f.w_down.sub(&wd).unwrap().max_abs() <= 1e-12);
        assert!(f.w_up.sub(&wu).unwrap().max_abs() <= 1e-12);
    }
}
