//! Multi-branch low-rank adapter with shared factors.
//!
//! Both projection weights are composed from three factors, `W = sum_i
//! P^T K_i Q`: a single `P` and `Q` shared across all branches, and one
//! small square kernel `K_i` per branch. The kernel of branch `i` is
//! additionally shared between the down- and the up-projection, so its
//! gradient accumulates contributions from both.

mod fuse;
mod init;
mod io;
mod ortho;
mod params;

pub use fuse::{fuse, fused_forward, FusedAdapter};
pub use init::{random_init, svd_init};
pub use io::{load_adapter, load_fused, save_adapter, save_fused, ADAPTER_FORMAT, FUSED_FORMAT};
pub use ortho::{composite_loss, orthogonal_loss, FactorGrads};
pub use params::{param_count, ParamCount};

use crate::error::{ColinError, Result};
use crate::linalg::{gelu, gelu_grad, Matrix};

/// Adapter inserted on a residual path: down-project, depth-wise convolve
/// over the token axis, GeLU, up-project, add back the input.
#[derive(Debug, Clone, PartialEq)]
pub struct ColinAdapter {
    /// Embed dimension (input/output feature count).
    pub d: usize,
    /// Hidden (projection) dimension.
    pub h: usize,
    /// Kernel size; `beta <= min(d, h)`.
    pub beta: usize,
    /// Branch count.
    pub alpha: usize,

    /// beta x h, down-projection left factor, shared across branches.
    pub p_down: Matrix,
    /// beta x d.
    pub q_down: Matrix,
    /// beta x d, up-projection left factor.
    pub p_up: Matrix,
    /// beta x h.
    pub q_up: Matrix,
    /// alpha kernels, each beta x beta, shared between the two projections.
    pub kernels: Vec<Matrix>,

    pub b_down: Vec<f64>,
    pub b_up: Vec<f64>,
    /// h channels x kernel width 3, applied along the token axis.
    pub dw_kernel: Matrix,
    pub dw_bias: Vec<f64>,
}

/// Activations saved by the forward pass for the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    x: Matrix,
    h0: Matrix,
    h1: Matrix,
    h2: Matrix,
    w_down: Matrix,
    w_up: Matrix,
}

/// One gradient per trainable field, shape-matched, plus the input gradient.
#[derive(Debug, Clone)]
pub struct AdapterGradients {
    pub p_down: Matrix,
    pub q_down: Matrix,
    pub p_up: Matrix,
    pub q_up: Matrix,
    pub kernels: Vec<Matrix>,
    pub b_down: Vec<f64>,
    pub b_up: Vec<f64>,
    pub dw_kernel: Matrix,
    pub dw_bias: Vec<f64>,
    pub d_input: Matrix,
}

impl ColinAdapter {
    /// Zero adapter with an identity depth-wise tap: forward is the
    /// identity map until something is trained.
    pub fn new(d: usize, h: usize, beta: usize, alpha: usize) -> Result<Self> {
        if beta == 0 || beta > d.min(h) {
            return Err(ColinError::InvalidConfig(format!(
                "beta {beta} must satisfy 1 <= beta <= min(d={d}, h={h})"
            )));
        }
        if alpha == 0 {
            return Err(ColinError::InvalidConfig("alpha must be >= 1".into()));
        }
        let mut dw_kernel = Matrix::zeros(h, 3);
        for c in 0..h {
            dw_kernel.set(c, 1, 1.0);
        }
        Ok(ColinAdapter {
            d,
            h,
            beta,
            alpha,
            p_down: Matrix::zeros(beta, h),
            q_down: Matrix::zeros(beta, d),
            p_up: Matrix::zeros(beta, d),
            q_up: Matrix::zeros(beta, h),
            kernels: vec![Matrix::zeros(beta, beta); alpha],
            b_down: vec![0.0; h],
            b_up: vec![0.0; d],
            dw_kernel,
            dw_bias: vec![0.0; h],
        })
    }

    /// Fully random adapter (factors, kernels, biases, DW weights); used by
    /// gradient-check harnesses that need a generic point in parameter space.
    pub fn random(d: usize, h: usize, beta: usize, alpha: usize, rng: &mut crate::linalg::Rng) -> Result<Self> {
        let mut a = ColinAdapter::new(d, h, beta, alpha)?;
        a.p_down = Matrix::kaiming_uniform(beta, h, rng);
        a.q_down = Matrix::kaiming_uniform(beta, d, rng);
        a.p_up = Matrix::kaiming_uniform(beta, d, rng);
        a.q_up = Matrix::kaiming_uniform(beta, h, rng);
        a.kernels = (0..alpha)
            .map(|_| Matrix::kaiming_uniform(beta, beta, rng))
            .collect();
        a.b_down = (0..h).map(|_| rng.uniform(-0.1, 0.1)).collect();
        a.b_up = (0..d).map(|_| rng.uniform(-0.1, 0.1)).collect();
        a.dw_kernel = Matrix::kaiming_uniform(h, 3, rng);
        a.dw_bias = (0..h).map(|_| rng.uniform(-0.1, 0.1)).collect();
        Ok(a)
    }

    pub fn w_down(&self) -> Result<Matrix> {
        compose_weight(&self.p_down, &self.kernels, &self.q_down)
    }

    pub fn w_up(&self) -> Result<Matrix> {
        compose_weight(&self.p_up, &self.kernels, &self.q_up)
    }

    /// Total trainable scalar count, biases and DW weights included.
    pub fn num_params(&self) -> usize {
        self.beta * self.h
            + self.beta * self.d
            + self.beta * self.d
            + self.beta * self.h
            + self.alpha * self.beta * self.beta
            + self.h
            + self.d
            + self.h * 3
            + self.h
    }
}

/// `sum_i p^T K_i q`, the fused multi-branch weight: `(beta x m)` and
/// `(beta x n)` factors give an `m x n` weight.
pub fn compose_weight(p: &Matrix, kernels: &[Matrix], q: &Matrix) -> Result<Matrix> {
    let beta = p.rows();
    if q.rows() != beta {
        return Err(ColinError::ShapeMismatch {
            op: "compose_weight",
            lhs: format!("{}x{}", p.rows(), p.cols()),
            rhs: format!("{}x{}", q.rows(), q.cols()),
        });
    }
    let mut ksum = Matrix::zeros(beta, beta);
    for k in kernels {
        if k.shape() != (beta, beta) {
            return Err(ColinError::ShapeMismatch {
                op: "compose_weight",
                lhs: format!("{beta}x{beta}"),
                rhs: format!("{}x{}", k.rows(), k.cols()),
            });
        }
        ksum.axpy(1.0, k)?;
    }
    // sum_i p^T K_i q = p^T (sum_i K_i) q since p, q are branch-shared
    p.transpose().matmul(&ksum)?.matmul(q)
}

/// Gradients of a scalar loss w.r.t. the three factors given the gradient
/// w.r.t. the composed weight. Every branch kernel receives the same
/// gradient `p dW q^T` because the rectangular factors are shared.
fn compose_backward(
    p: &Matrix,
    kernels: &[Matrix],
    q: &Matrix,
    d_w: &Matrix,
) -> Result<(Matrix, Vec<Matrix>, Matrix)> {
    let beta = p.rows();
    let mut ksum = Matrix::zeros(beta, beta);
    for k in kernels {
        ksum.axpy(1.0, k)?;
    }
    let q_dwt = q.matmul(&d_w.transpose())?; // beta x m
    let p_dw = p.matmul(d_w)?; // beta x n
    let d_p = ksum.matmul(&q_dwt)?;
    let d_q = ksum.transpose().matmul(&p_dw)?;
    let d_k = p_dw.matmul(&q.transpose())?; // beta x beta, same for all branches
    Ok((d_p, vec![d_k; kernels.len()], d_q))
}

/// Per-channel width-3 convolution over the token axis, zero padded.
fn dwconv_forward(h0: &Matrix, weight: &Matrix, bias: &[f64]) -> Matrix {
    let (tokens, channels) = h0.shape();
    let mut out = Matrix::zeros(tokens, channels);
    for t in 0..tokens {
        for c in 0..channels {
            let mut acc = bias[c];
            for j in 0..3 {
                let src = t as isize + j as isize - 1;
                if src >= 0 && (src as usize) < tokens {
                    acc += weight.get(c, j) * h0.get(src as usize, c);
                }
            }
            out.set(t, c, acc);
        }
    }
    out
}

fn dwconv_backward(
    h0: &Matrix,
    weight: &Matrix,
    d_h1: &Matrix,
) -> (Matrix, Matrix, Vec<f64>) {
    let (tokens, channels) = h0.shape();
    let mut d_h0 = Matrix::zeros(tokens, channels);
    let mut d_weight = Matrix::zeros(channels, 3);
    let mut d_bias = vec![0.0; channels];
    for t in 0..tokens {
        for c in 0..channels {
            let g = d_h1.get(t, c);
            d_bias[c] += g;
            for j in 0..3 {
                let src = t as isize + j as isize - 1;
                if src >= 0 && (src as usize) < tokens {
                    d_weight.set(c, j, d_weight.get(c, j) + g * h0.get(src as usize, c));
                    d_h0.set(
                        src as usize,
                        c,
                        d_h0.get(src as usize, c) + g * weight.get(c, j),
                    );
                }
            }
        }
    }
    (d_h0, d_weight, d_bias)
}

fn add_bias_rows(m: &mut Matrix, bias: &[f64]) {
    let cols = m.cols();
    for i in 0..m.rows() {
        let row = m.row_mut(i);
        for j in 0..cols {
            row[j] += bias[j];
        }
    }
}

/// `y = x + GeLU(DWConv(x W_D^T + b_down)) W_U^T + b_up`.
pub fn adapter_forward(adapter: &ColinAdapter, x: &Matrix) -> Result<(Matrix, ForwardCache)> {
    if x.cols() != adapter.d {
        return Err(ColinError::ShapeMismatch {
            op: "adapter_forward",
            lhs: format!("{}x{}", x.rows(), x.cols()),
            rhs: format!("*x{}", adapter.d),
        });
    }
    let w_down = adapter.w_down()?;
    let w_up = adapter.w_up()?;
    let mut h0 = x.matmul(&w_down.transpose())?;
    add_bias_rows(&mut h0, &adapter.b_down);
    let h1 = dwconv_forward(&h0, &adapter.dw_kernel, &adapter.dw_bias);
    let mut h2 = h1.clone();
    for v in h2.data_mut() {
        *v = gelu(*v);
    }
    let mut y = h2.matmul(&w_up.transpose())?;
    add_bias_rows(&mut y, &adapter.b_up);
    let y = y.add(x)?;
    let cache = ForwardCache {
        x: x.clone(),
        h0,
        h1,
        h2,
        w_down,
        w_up,
    };
    Ok((y, cache))
}

/// Exact analytic gradients for the upstream gradient `d_y`.
pub fn adapter_backward(
    adapter: &ColinAdapter,
    cache: &ForwardCache,
    d_y: &Matrix,
) -> Result<AdapterGradients> {
    if d_y.shape() != cache.x.shape() {
        return Err(ColinError::ShapeMismatch {
            op: "adapter_backward",
            lhs: format!("{}x{}", d_y.rows(), d_y.cols()),
            rhs: format!("{}x{}", cache.x.rows(), cache.x.cols()),
        });
    }
    let tokens = d_y.rows();

    let mut d_b_up = vec![0.0; adapter.d];
    for t in 0..tokens {
        for (j, acc) in d_b_up.iter_mut().enumerate() {
            *acc += d_y.get(t, j);
        }
    }
    let d_w_up = d_y.transpose().matmul(&cache.h2)?; // d x h
    let d_h2 = d_y.matmul(&cache.w_up)?; // tokens x h
    let mut d_h1 = d_h2;
    for (g, &z) in d_h1.data_mut().iter_mut().zip(cache.h1.data()) {
        *g *= gelu_grad(z);
    }
    let (d_h0, d_dw_kernel, d_dw_bias) = dwconv_backward(&cache.h0, &adapter.dw_kernel, &d_h1);

    let mut d_b_down = vec![0.0; adapter.h];
    for t in 0..tokens {
        for (j, acc) in d_b_down.iter_mut().enumerate() {
            *acc += d_h0.get(t, j);
        }
    }
    let d_w_down = d_h0.transpose().matmul(&cache.x)?; // h x d
    let d_input = d_y.add(&d_h0.matmul(&cache.w_down)?)?;

    let (d_p_down, k_down, d_q_down) =
        compose_backward(&adapter.p_down, &adapter.kernels, &adapter.q_down, &d_w_down)?;
    let (d_p_up, k_up, d_q_up) =
        compose_backward(&adapter.p_up, &adapter.kernels, &adapter.q_up, &d_w_up)?;
    // kernel sharing: both projections contribute to every branch kernel
    let kernels: Vec<Matrix> = k_down
        .into_iter()
        .zip(k_up)
        .map(|(a, b)| a.add(&b))
        .collect::<Result<_>>()?;

    Ok(AdapterGradients {
        p_down: d_p_down,
        q_down: d_q_down,
        p_up: d_p_up,
        q_up: d_q_up,
        kernels,
        b_down: d_b_down,
        b_up: d_b_up,
        dw_kernel: d_dw_kernel,
        dw_bias: d_dw_bias,
        d_input,
    })
}

impl AdapterGradients {
    pub fn zeros_like(adapter: &ColinAdapter, tokens: usize) -> Self {
        AdapterGradients {
            p_down: Matrix::zeros(adapter.beta, adapter.h),
            q_down: Matrix::zeros(adapter.beta, adapter.d),
            p_up: Matrix::zeros(adapter.beta, adapter.d),
            q_up: Matrix::zeros(adapter.beta, adapter.h),
            kernels: vec![Matrix::zeros(adapter.beta, adapter.beta); adapter.alpha],
            b_down: vec![0.0; adapter.h],
            b_up: vec![0.0; adapter.d],
            dw_kernel: Matrix::zeros(adapter.h, 3),
            dw_bias: vec![0.0; adapter.h],
            d_input: Matrix::zeros(tokens, adapter.d),
        }
    }

    /// Scale every field in place (momentum decay).
    pub fn scale_mut(&mut self, factor: f64) {
        for v in self.p_down.data_mut() {
            *v *= factor;
        }
        for v in self.q_down.data_mut() {
            *v *= factor;
        }
        for v in self.p_up.data_mut() {
            *v *= factor;
        }
        for v in self.q_up.data_mut() {
            *v *= factor;
        }
        for k in &mut self.kernels {
            for v in k.data_mut() {
                *v *= factor;
            }
        }
        for v in &mut self.b_down {
            *v *= factor;
        }
        for v in &mut self.b_up {
            *v *= factor;
        }
        for v in self.dw_kernel.data_mut() {
            *v *= factor;
        }
        for v in &mut self.dw_bias {
            *v *= factor;
        }
        for v in self.d_input.data_mut() {
            *v *= factor;
        }
    }

    /// Accumulate `scale * other` into every field.
    pub fn accumulate(&mut self, scale: f64, other: &AdapterGradients) -> Result<()> {
        self.p_down.axpy(scale, &other.p_down)?;
        self.q_down.axpy(scale, &other.q_down)?;
        self.p_up.axpy(scale, &other.p_up)?;
        self.q_up.axpy(scale, &other.q_up)?;
        for (a, b) in self.kernels.iter_mut().zip(&other.kernels) {
            a.axpy(scale, b)?;
        }
        for (a, b) in self.b_down.iter_mut().zip(&other.b_down) {
            *a += scale * b;
        }
        for (a, b) in self.b_up.iter_mut().zip(&other.b_up) {
            *a += scale * b;
        }
        self.dw_kernel.axpy(scale, &other.dw_kernel)?;
        for (a, b) in self.dw_bias.iter_mut().zip(&other.dw_bias) {
            *a += scale * b;
        }
        Ok(())
    }

    /// Fold scaled factor-orthogonality gradients into the task gradients.
    pub fn add_factor_grads(&mut self, scale: f64, fg: &FactorGrads) -> Result<()> {
        self.p_down.axpy(scale, &fg.p_down)?;
        self.q_down.axpy(scale, &fg.q_down)?;
        self.p_up.axpy(scale, &fg.p_up)?;
        self.q_up.axpy(scale, &fg.q_up)?;
        Ok(())
    }
}
