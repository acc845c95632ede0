//! Parameter accounting for the composed projection versus a dense layer.

/// Counts for `gamma` projection layers of shape `m x n`, biases excluded.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct ParamCount {
    pub colin: u64,
    pub dense_baseline: u64,
    /// `1 - colin / dense_baseline`; may be <= 0 for degenerate settings
    /// and is reported as-is.
    pub reduction: f64,
}

/// `colin = gamma * beta * (m + n) + alpha * beta^2`,
/// `dense = gamma * m * n`.
pub fn param_count(m: u64, n: u64, beta: u64, alpha: u64, gamma: u64) -> ParamCount {
    let colin = gamma * beta * (m + n) + alpha * beta * beta;
    let dense_baseline = gamma * m * n;
    let reduction = 1.0 - colin as f64 / dense_baseline as f64;
    ParamCount {
        colin,
        dense_baseline,
        reduction,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ninety_seven_percent_case() {
        // gamma=1, m=384, n=768, beta=8: factors beta*(m+n) = 9216,
        // dense 294912, reduction exactly 31/32 = 0.96875
        let c = param_count(384, 768, 8, 0, 1);
        assert_eq!(c.dense_baseline, 294_912);
        assert_eq!(c.colin, 9_216);
        assert_eq!(c.reduction, 0.96875);
    }

    #[test]
    fn two_layer_four_branch_case() {
        let c = param_count(384, 768, 8, 4, 2);
        assert_eq!(c.colin, 18_432 + 256);
    }

    #[test]
    fn degenerate_beta_reports_unclamped() {
        // beta = min(m, n): reduction can go non-positive
        let c = param_count(4, 4, 4, 8, 1);
        assert!(c.reduction <= 0.0);
    }
}
