//! Convergence simulation: gradient-descent approximation of a random
//! target `W` by `P^T Q`, with and without the orthogonality penalty,
//! aggregated over paired seeds.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{ColinError, Result};
use crate::linalg::{Matrix, Rng};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    pub m: usize,
    pub k: usize,
    pub n: usize,
    pub lr: f64,
    pub iters: usize,
    pub seeds: u64,
    /// Weight on the orthogonality term in the with-OL arm.
    pub ol_weight: f64,
    pub record_every: usize,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            m: 100,
            k: 30,
            n: 5000,
            lr: 1e-5,
            iters: 2000,
            seeds: 20,
            ol_weight: 1.0,
            record_every: 1,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k > self.m.min(self.n) {
            return Err(ColinError::InvalidConfig(format!(
                "k={} must be <= min(m={}, n={})",
                self.k, self.m, self.n
            )));
        }
        if self.lr <= 0.0 || self.seeds == 0 || self.record_every == 0 {
            return Err(ColinError::InvalidConfig(
                "lr > 0, seeds >= 1, record_every >= 1 required".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Arm {
    WithOl,
    WithoutOl,
}

impl fmt::Display for Arm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Arm::WithOl => write!(f, "with_OL"),
            Arm::WithoutOl => write!(f, "without_OL"),
        }
    }
}

/// Approximation loss `||W - P^T Q||_F` per recorded iteration. The
/// recorded value never includes the orthogonality term.
#[derive(Debug, Clone)]
pub struct SimTrace {
    pub arm: Arm,
    pub seed: u64,
    pub iters: Vec<usize>,
    pub losses: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct SimSummary {
    pub config: SimConfig,
    pub iters: Vec<usize>,
    pub with_ol: ArmStats,
    pub without_ol: ArmStats,
    pub traces: Vec<SimTrace>,
}

#[derive(Debug, Clone, Default)]
pub struct ArmStats {
    pub mean: Vec<f64>,
    pub min: Vec<f64>,
    pub max: Vec<f64>,
}

impl SimSummary {
    pub fn final_mean(&self, arm: Arm) -> f64 {
        let stats = match arm {
            Arm::WithOl => &self.with_ol,
            Arm::WithoutOl => &self.without_ol,
        };
        *stats.mean.last().expect("non-empty summary")
    }

    /// `(mean_noOL - mean_OL) / mean_noOL` at the final recorded iteration.
    pub fn final_gap(&self) -> f64 {
        let no_ol = self.final_mean(Arm::WithoutOl);
        (no_ol - self.final_mean(Arm::WithOl)) / no_ol
    }
}

/// One seeded run of one arm. Both arms consume the same seed stream, so
/// `W`, `P0`, `Q0` are identical across arms for a given seed.
pub fn run_sim_single(cfg: &SimConfig, seed: u64, with_ol: bool) -> Result<SimTrace> {
    cfg.validate()?;
    let mut rng = Rng::new(seed);
    let target = Matrix::kaiming_uniform(cfg.m, cfg.n, &mut rng);
    let mut p = Matrix::kaiming_uniform(cfg.k, cfg.m, &mut rng);
    let mut q = Matrix::kaiming_uniform(cfg.k, cfg.n, &mut rng);
    run_from(cfg, seed, with_ol, target, &mut p, &mut q)
}

fn run_from(
    cfg: &SimConfig,
    seed: u64,
    with_ol: bool,
    target: Matrix,
    p: &mut Matrix,
    q: &mut Matrix,
) -> Result<SimTrace> {
    let arm = if with_ol { Arm::WithOl } else { Arm::WithoutOl };
    let mut iters = Vec::new();
    let mut losses = Vec::new();
    let eye = Matrix::identity(cfg.k);
    for step in 0..=cfg.iters {
        let approx = p.transpose().matmul(q)?;
        let err = target.sub(&approx)?;
        let loss = err.frobenius_norm();
        if !loss.is_finite() {
            return Err(ColinError::Divergence { step });
        }
        if step % cfg.record_every == 0 || step == cfg.iters {
            iters.push(step);
            losses.push(loss);
        }
        if step == cfg.iters {
            break;
        }
        // descent on ||W - P^T Q||_F^2: grad wrt composed weight is -2 err
        let mut grad_p = q.matmul(&err.transpose())?.scale(-2.0);
        let mut grad_q = p.matmul(&err)?.scale(-2.0);
        if with_ol {
            let p_dev = p.matmul(&p.transpose())?.sub(&eye)?;
            let q_dev = q.matmul(&q.transpose())?.sub(&eye)?;
            grad_p.axpy(4.0 * cfg.ol_weight, &p_dev.matmul(p)?)?;
            grad_q.axpy(4.0 * cfg.ol_weight, &q_dev.matmul(q)?)?;
        }
        p.axpy(-cfg.lr, &grad_p)?;
        q.axpy(-cfg.lr, &grad_q)?;
    }
    Ok(SimTrace {
        arm,
        seed,
        iters,
        losses,
    })
}

/// Both arms over all seeds, aggregated per recorded iteration.
pub fn run_sim(cfg: &SimConfig) -> Result<SimSummary> {
    cfg.validate()?;
    let mut traces = Vec::with_capacity(2 * cfg.seeds as usize);
    for &with_ol in &[true, false] {
        for seed in 0..cfg.seeds {
            traces.push(run_sim_single(cfg, seed, with_ol).map_err(|e| match e {
                ColinError::Divergence { step } => ColinError::InvalidConfig(format!(
                    "seed {seed} ({}) diverged at step {step}",
                    if with_ol { Arm::WithOl } else { Arm::WithoutOl }
                )),
                other => other,
            })?);
        }
    }
    let iters = traces[0].iters.clone();
    let with_ol = aggregate(&traces, Arm::WithOl, iters.len());
    let without_ol = aggregate(&traces, Arm::WithoutOl, iters.len());
    Ok(SimSummary {
        config: cfg.clone(),
        iters,
        with_ol,
        without_ol,
        traces,
    })
}

fn aggregate(traces: &[SimTrace], arm: Arm, points: usize) -> ArmStats {
    let mut stats = ArmStats {
        mean: vec![0.0; points],
        min: vec![f64::INFINITY; points],
        max: vec![f64::NEG_INFINITY; points],
    };
    let mut count = 0usize;
    for t in traces.iter().filter(|t| t.arm == arm) {
        count += 1;
        for (i, &l) in t.losses.iter().enumerate() {
            stats.mean[i] += l;
            stats.min[i] = stats.min[i].min(l);
            stats.max[i] = stats.max[i].max(l);
        }
    }
    for v in &mut stats.mean {
        *v /= count as f64;
    }
    stats
}

#[derive(Debug, Clone, Serialize)]
pub struct GapEntry {
    pub n: usize,
    /// `(mean_noOL - mean_OL) / mean_noOL` at the final iteration.
    pub gap: f64,
}

/// Final-loss gap per target width `n`, everything else held at `base`.
pub fn compare_sizes(base: &SimConfig, n_values: &[usize]) -> Result<Vec<GapEntry>> {
    let mut out = Vec::with_capacity(n_values.len());
    for &n in n_values {
        let cfg = SimConfig { n, ..base.clone() };
        let summary = run_sim(&cfg)?;
        out.push(GapEntry {
            n,
            gap: summary.final_gap(),
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_cfg() -> SimConfig {
        SimConfig {
            m: 1,
            k: 1,
            n: 1,
            lr: 1e-2,
            iters: 50,
            seeds: 1,
            ol_weight: 1.0,
            record_every: 1,
        }
    }

    #[test]
    fn scalar_factorization_matches_scalar_oracle() {
        let cfg = tiny_cfg();
        let trace = run_sim_single(&cfg, 0, false).unwrap();
        // scalar oracle: same draws, plain f64 arithmetic
        let mut rng = Rng::new(0);
        let bound = 6.0f64.sqrt();
        let w = rng.uniform(-bound, bound);
        let mut p = rng.uniform(-bound, bound);
        let mut q = rng.uniform(-bound, bound);
        for (i, &loss) in trace.losses.iter().enumerate() {
            let e = w - p * q;
            assert!((loss - e.abs()).abs() <= 1e-12, "iter {i}");
            let gp = -2.0 * q * e;
            let gq = -2.0 * p * e;
            p -= cfg.lr * gp;
            q -= cfg.lr * gq;
        }
    }

    #[test]
    fn planted_optimum_stays_at_zero() {
        let cfg = SimConfig {
            m: 4,
            k: 2,
            n: 5,
            lr: 1e-3,
            iters: 100,
            seeds: 1,
            ol_weight: 0.0,
            record_every: 10,
        };
        let mut rng = Rng::new(9);
        let p0 = Matrix::kaiming_uniform(cfg.k, cfg.m, &mut rng);
        let q0 = Matrix::kaiming_uniform(cfg.k, cfg.n, &mut rng);
        let target = p0.transpose().matmul(&q0).unwrap();
        let mut p = p0;
        let mut q = q0;
        let trace = run_from(&cfg, 9, false, target, &mut p, &mut q).unwrap();
        assert!(trace.losses[0] <= 1e-12);
        for &l in &trace.losses {
            assert!(l <= trace.losses[0] + 1e-12);
        }
    }

    #[test]
    fn arms_identical_when_ol_weight_zero() {
        let cfg = SimConfig {
            m: 6,
            k: 3,
            n: 8,
            lr: 1e-3,
            iters: 40,
            seeds: 1,
            ol_weight: 0.0,
            record_every: 1,
        };
        let a = run_sim_single(&cfg, 5, true).unwrap();
        let b = run_sim_single(&cfg, 5, false).unwrap();
        assert_eq!(a.losses, b.losses);
    }

    #[test]
    fn single_seed_degenerate_aggregation() {
        let cfg = SimConfig {
            m: 5,
            k: 2,
            n: 6,
            lr: 1e-3,
            iters: 20,
            seeds: 1,
            ol_weight: 1.0,
            record_every: 5,
        };
        let s = run_sim(&cfg).unwrap();
        for i in 0..s.iters.len() {
            assert_eq!(s.with_ol.mean[i], s.with_ol.min[i]);
            assert_eq!(s.with_ol.mean[i], s.with_ol.max[i]);
        }
    }

    #[test]
    fn aggregation_matches_direct_recomputation() {
        let traces = vec![
            SimTrace {
                arm: Arm::WithOl,
                seed: 0,
                iters: vec![0, 1],
                losses: vec![3.0, 1.0],
            },
            SimTrace {
                arm: Arm::WithOl,
                seed: 1,
                iters: vec![0, 1],
                losses: vec![5.0, 2.0],
            },
            SimTrace {
                arm: Arm::WithOl,
                seed: 2,
                iters: vec![0, 1],
                losses: vec![4.0, 0.5],
            },
        ];
        let stats = aggregate(&traces, Arm::WithOl, 2);
        assert_eq!(stats.mean, vec![4.0, 3.5 / 3.0]);
        assert_eq!(stats.min, vec![3.0, 0.5]);
        assert_eq!(stats.max, vec![5.0, 2.0]);
    }

    #[test]
    fn summary_is_deterministic() {
        let cfg = SimConfig {
            m: 8,
            k: 3,
            n: 10,
            lr: 1e-4,
            iters: 60,
            seeds: 3,
            ol_weight: 1.0,
            record_every: 10,
        };
        let a = run_sim(&cfg).unwrap();
        let b = run_sim(&cfg).unwrap();
        assert_eq!(a.with_ol.mean, b.with_ol.mean);
        assert_eq!(a.without_ol.max, b.without_ol.max);
    }

    #[test]
    fn losses_finite_and_nonnegative() {
        let cfg = SimConfig {
            m: 10,
            k: 4,
            n: 12,
            lr: 1e-4,
            iters: 100,
            seeds: 2,
            ol_weight: 1.0,
            record_every: 1,
        };
        let s = run_sim(&cfg).unwrap();
        for t in &s.traces {
            assert!(t.losses.iter().all(|l| l.is_finite() && *l >= 0.0));
        }
    }

    #[test]
    fn invalid_config_rejected() {
        let cfg = SimConfig {
            k: 50,
            m: 10,
            n: 10,
            ..SimConfig::default()
        };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn single_n_gap_report() {
        let base = SimConfig {
            m: 6,
            k: 2,
            n: 4,
            lr: 1e-3,
            iters: 50,
            seeds: 2,
            ol_weight: 1.0,
            record_every: 10,
        };
        let report = compare_sizes(&base, &[8]).unwrap();
        assert_eq!(report.len(), 1);
        assert_eq!(report[0].n, 8);
    }
}
