//! Numeric substrate: dense matrices, seeded RNG, SVD.

mod matrix;
mod rng;
mod svd;

pub use matrix::Matrix;
pub use rng::Rng;
pub use svd::{svd, svd_with, SvdResult, SVD_DEFAULT_MAX_SWEEPS, SVD_DEFAULT_TOL};

/// Exact GeLU: `0.5 * z * (1 + erf(z / sqrt(2)))`.
#[inline]
pub fn gelu(z: f64) -> f64 {
    0.5 * z * (1.0 + libm::erf(z / std::f64::consts::SQRT_2))
}

/// Derivative of the exact GeLU: `Phi(z) + z * phi(z)`.
#[inline]
pub fn gelu_grad(z: f64) -> f64 {
    let phi_cdf = 0.5 * (1.0 + libm::erf(z / std::f64::consts::SQRT_2));
    let phi_pdf = (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt();
    phi_cdf + z * phi_pdf
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gelu_fixed_points() {
        assert_eq!(gelu(0.0), 0.0);
        // gelu(2) = 1 + erf(sqrt(2)) = 1.9544997361036416
        assert!((gelu(2.0) - 1.9544997361036416).abs() < 1e-12);
    }

    #[test]
    fn gelu_grad_matches_central_difference() {
        let h = 1e-6;
        for &z in &[-2.5, -1.0, -0.1, 0.0, 0.3, 1.7, 3.0] {
            let num = (gelu(z + h) - gelu(z - h)) / (2.0 * h);
            assert!((gelu_grad(z) - num).abs() < 1e-8, "z={z}");
        }
    }
}
