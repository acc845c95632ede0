//! Teacher-generated synthetic regression task.

use crate::error::Result;
use crate::linalg::{Matrix, Rng};

#[derive(Debug, Clone)]
pub struct Sample {
    /// tokens x d
    pub x: Matrix,
    /// length out_dim
    pub y: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub d: usize,
    pub out_dim: usize,
    pub tokens: usize,
    pub samples: Vec<Sample>,
}

const TEACHER_HIDDEN: usize = 16;

/// A hidden two-layer tanh network maps the token-pooled input to the
/// regression target: `y = tanh(pooled T1^T) T2^T`.
pub fn make_synthetic_task(
    d: usize,
    out_dim: usize,
    tokens: usize,
    samples: usize,
    rng: &mut Rng,
) -> Result<Dataset> {
    assert!(samples >= 1);
    let t1 = Matrix::kaiming_uniform(TEACHER_HIDDEN, d, rng);
    let t2 = Matrix::kaiming_uniform(out_dim, TEACHER_HIDDEN, rng);
    let mut out = Vec::with_capacity(samples);
    for _ in 0..samples {
        let x = Matrix::kaiming_uniform(tokens, d, rng);
        let pooled = pool(&x);
        let mut hidden = pooled.matmul(&t1.transpose())?;
        for v in hidden.data_mut() {
            *v = v.tanh();
        }
        let y = hidden.matmul(&t2.transpose())?;
        out.push(Sample {
            x,
            y: y.data().to_vec(),
        });
    }
    Ok(Dataset {
        d,
        out_dim,
        tokens,
        samples: out,
    })
}

/// Identity-teacher variant: the target is the pooled input itself
/// (`out_dim = d`). A zero-adapter backbone of zero weights with an
/// identity head solves it exactly.
pub fn make_identity_task(d: usize, tokens: usize, samples: usize, rng: &mut Rng) -> Dataset {
    let mut out = Vec::with_capacity(samples);
    for _ in 0..samples {
        let x = Matrix::kaiming_uniform(tokens, d, rng);
        let y = pool(&x).data().to_vec();
        out.push(Sample { x, y });
    }
    Dataset {
        d,
        out_dim: d,
        tokens,
        samples: out,
    }
}

fn pool(x: &Matrix) -> Matrix {
    let (tokens, d) = x.shape();
    let mut pooled = Matrix::zeros(1, d);
    for t in 0..tokens {
        for j in 0..d {
            pooled.set(0, j, pooled.get(0, j) + x.get(t, j) / tokens as f64);
        }
    }
    pooled
}

impl Dataset {
    /// Mean and variance of all target entries.
    pub fn target_stats(&self) -> (f64, f64) {
        let all: Vec<f64> = self.samples.iter().flat_map(|s| s.y.clone()).collect();
        let n = all.len() as f64;
        let mean = all.iter().sum::<f64>() / n;
        let var = all.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        (mean, var)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::gelu;
    use crate::toy::ToyModel;

    #[test]
    fn identity_task_solved_by_identity_model() {
        let dataset = make_identity_task(6, 3, 8, &mut Rng::new(1));
        // zero backbone, zero adapters, identity head
        let mut model = ToyModel {
            d: 6,
            out_dim: 6,
            blocks: vec![],
            head_weight: Matrix::identity(6),
            head_bias: vec![0.0; 6],
        };
        // add one all-zero block to exercise the residual path
        let (built, _) = crate::toy::build_toy_model(1, 6, 3, 2, 1, 6, &mut Rng::new(2)).unwrap();
        let mut block = built.blocks[0].clone();
        block.mixer_weight = Matrix::zeros(6, 6);
        block.mlp_w1 = Matrix::zeros(24, 6);
        block.mlp_w2 = Matrix::zeros(6, 24);
        block.adapter_1 = crate::adapter::ColinAdapter::new(6, 3, 2, 1).unwrap();
        block.adapter_2 = crate::adapter::ColinAdapter::new(6, 3, 2, 1).unwrap();
        model.blocks.push(block);

        let mut total = 0.0;
        for s in &dataset.samples {
            let (y, _) = model.forward(&s.x).unwrap();
            for (a, b) in y.data().iter().zip(&s.y) {
                total += (a - b).powi(2);
            }
        }
        // GeLU(0) = 0 so the zero MLP contributes nothing; exact passthrough
        assert_eq!(gelu(0.0), 0.0);
        assert!(total <= 1e-24, "loss {total:e}");
    }

    #[test]
    fn fixed_seed_reproduces_dataset() {
        let a = make_synthetic_task(5, 3, 4, 10, &mut Rng::new(9)).unwrap();
        let b = make_synthetic_task(5, 3, 4, 10, &mut Rng::new(9)).unwrap();
        for (sa, sb) in a.samples.iter().zip(&b.samples) {
            assert_eq!(sa.x, sb.x);
            assert_eq!(sa.y, sb.y);
        }
    }

    #[test]
    fn target_stats_match_recomputation() {
        let ds = make_synthetic_task(6, 4, 3, 20, &mut Rng::new(3)).unwrap();
        let (mean, var) = ds.target_stats();
        let mut all = Vec::new();
        for s in &ds.samples {
            all.extend_from_slice(&s.y);
        }
        let m = all.iter().sum::<f64>() / all.len() as f64;
        let v = all.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / all.len() as f64;
        assert!((mean - m).abs() <= 1e-15);
        assert!((var - v).abs() <= 1e-15);
        assert!(var > 0.0);
    }
}
