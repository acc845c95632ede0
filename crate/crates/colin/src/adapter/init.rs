//! Factor initialization schemes.

use crate::error::Result;
use crate::linalg::{svd, Matrix, Rng};

use super::ColinAdapter;

/// Truncated singular vectors of a top slice of `U`/`V`, transposed so the
/// result has orthonormal rows (`beta x dim`).
fn top_rows(basis: &Matrix, beta: usize) -> Matrix {
    let dim = basis.rows();
    let mut out = Matrix::zeros(beta, dim);
    for b in 0..beta {
        for i in 0..dim {
            out.set(b, i, basis.get(i, b));
        }
    }
    out
}

/// Orthogonal initialization: per projection direction, draw a
/// kaiming-uniform target of the dense shape, decompose it, and take the
/// leading singular vectors as factor rows. The shared kernels are set once,
/// to the top singular values of the down-projection draw, on the diagonal.
/// Biases start at zero and the depth-wise kernel at the identity tap.
pub fn svd_init(adapter: &mut ColinAdapter, rng: &mut Rng) -> Result<()> {
    let (d, h, beta) = (adapter.d, adapter.h, adapter.beta);

    // down-projection target is h x d
    let w0_down = Matrix::kaiming_uniform(h, d, rng);
    let dec = svd(&w0_down)?;
    adapter.p_down = top_rows(&dec.u, beta);
    adapter.q_down = top_rows(&dec.v, beta);
    adapter.kernels = vec![Matrix::diag(&dec.s[..beta]); adapter.alpha];

    // up-projection target is d x h; only its p and q are set
    let w0_up = Matrix::kaiming_uniform(d, h, rng);
    let dec = svd(&w0_up)?;
    adapter.p_up = top_rows(&dec.u, beta);
    adapter.q_up = top_rows(&dec.v, beta);

    adapter.b_down = vec![0.0; h];
    adapter.b_up = vec![0.0; d];
    adapter.dw_bias = vec![0.0; h];
    adapter.dw_kernel = Matrix::zeros(h, 3);
    for c in 0..h {
        adapter.dw_kernel.set(c, 1, 1.0);
    }
    Ok(())
}

/// Random-factor baseline: kaiming-uniform `P`/`Q`, kernels `1e-2 * I` so
/// the composed weight is nonzero and gradients flow through the kernels.
pub fn random_init(adapter: &mut ColinAdapter, rng: &mut Rng) -> Result<()> {
    let (d, h, beta) = (adapter.d, adapter.h, adapter.beta);
    adapter.p_down = Matrix::kaiming_uniform(beta, h, rng);
    adapter.q_down = Matrix::kaiming_uniform(beta, d, rng);
    adapter.p_up = Matrix::kaiming_uniform(beta, d, rng);
    adapter.q_up = Matrix::kaiming_uniform(beta, h, rng);
    adapter.kernels = vec![Matrix::identity(beta).scale(1e-2); adapter.alpha];
    adapter.b_down = vec![0.0; h];
    adapter.b_up = vec![0.0; d];
    adapter.dw_bias = vec![0.0; h];
    adapter.dw_kernel = Matrix::zeros(h, 3);
    for c in 0..h {
        adapter.dw_kernel.set(c, 1, 1.0);
    }
    Ok(())
}
