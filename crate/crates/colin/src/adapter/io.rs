//! JSON persistence for adapters and their fused form.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{ColinError, Result};
use crate::linalg::Matrix;

use super::{ColinAdapter, FusedAdapter};

pub const ADAPTER_FORMAT: &str = "colin-adapter/1";
pub const FUSED_FORMAT: &str = "colin-adapter-fused/1";

#[derive(Serialize, Deserialize)]
struct AdapterRecord {
    format: String,
    d: usize,
    h: usize,
    beta: usize,
    alpha: usize,
    lambda: f64,
    p_down: Matrix,
    q_down: Matrix,
    p_up: Matrix,
    q_up: Matrix,
    kernels: Vec<Matrix>,
    b_down: Vec<f64>,
    b_up: Vec<f64>,
    dw_kernel: Matrix,
    dw_bias: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct FusedRecord {
    format: String,
    d: usize,
    h: usize,
    w_down: Matrix,
    w_up: Matrix,
    b_down: Vec<f64>,
    b_up: Vec<f64>,
    dw_kernel: Matrix,
    dw_bias: Vec<f64>,
}

pub fn save_adapter(path: &Path, adapter: &ColinAdapter, lambda: f64) -> Result<()> {
    let record = AdapterRecord {
        format: ADAPTER_FORMAT.to_string(),
        d: adapter.d,
        h: adapter.h,
        beta: adapter.beta,
        alpha: adapter.alpha,
        lambda,
        p_down: adapter.p_down.clone(),
        q_down: adapter.q_down.clone(),
        p_up: adapter.p_up.clone(),
        q_up: adapter.q_up.clone(),
        kernels: adapter.kernels.clone(),
        b_down: adapter.b_down.clone(),
        b_up: adapter.b_up.clone(),
        dw_kernel: adapter.dw_kernel.clone(),
        dw_bias: adapter.dw_bias.clone(),
    };
    std::fs::write(path, serde_json::to_string_pretty(&record)?)?;
    Ok(())
}

/// Returns the adapter and the stored orthogonality weight.
pub fn load_adapter(path: &Path) -> Result<(ColinAdapter, f64)> {
    let record: AdapterRecord = serde_json::from_str(&std::fs::read_to_string(path)?)?;
    if record.format != ADAPTER_FORMAT {
        return Err(ColinError::InvalidConfig(format!(
            "unsupported adapter format {:?}",
            record.format
        )));
    }
    let adapter = ColinAdapter {
        d: record.d,
        h: record.h,
        beta: record.beta,
        alpha: record.alpha,
        p_down: record.p_down,
        q_down: record.q_down,
        p_up: record.p_up,
        q_up: record.q_up,
        kernels: record.kernels,
        b_down: record.b_down,
        b_up: record.b_up,
        dw_kernel: record.dw_kernel,
        dw_bias: record.dw_bias,
    };
    validate(&adapter)?;
    Ok((adapter, record.lambda))
}

fn validate(a: &ColinAdapter) -> Result<()> {
    let checks = [
        (a.p_down.shape(), (a.beta, a.h), "p_down"),
        (a.q_down.shape(), (a.beta, a.d), "q_down"),
        (a.p_up.shape(), (a.beta, a.d), "p_up"),
        (a.q_up.shape(), (a.beta, a.h), "q_up"),
        (a.dw_kernel.shape(), (a.h, 3), "dw_kernel"),
    ];
    for (got, want, name) in checks {
        if got != want {
            return Err(ColinError::InvalidConfig(format!(
                "{name} has shape {got:?}, expected {want:?}"
            )));
        }
    }
    if a.kernels.len() != a.alpha
        || a.kernels.iter().any(|k| k.shape() != (a.beta, a.beta))
    {
        return Err(ColinError::InvalidConfig(
            "kernel list must hold alpha beta x beta matrices".into(),
        ));
    }
    if a.b_down.len() != a.h || a.b_up.len() != a.d || a.dw_bias.len() != a.h {
        return Err(ColinError::InvalidConfig("bias length mismatch".into()));
    }
    Ok(())
}

pub fn save_fused(path: &Path, fused: &FusedAdapter) -> Result<()> {
    let record = FusedRecord {
        format: FUSED_FORMAT.to_string(),
        d: fused.d,
        h: fused.h,
        w_down: fused.w_down.clone(),
        w_up: fused.w_up.clone(),
        b_down: fused.b_down.clone(),
        b_up: fused.b_up.clone(),
        dw_kernel: fused.dw_kernel.clone(),
        dw_bias: fused.dw_bias.clone(),
    };
    std::fs::write(path, serde_json::to_string_pretty(&record)?)?;
    Ok(())
}

pub fn load_fused(path: &Path) -> Result<FusedAdapter> {
    let record: FusedRecord = serde_json::from_str(&std::fs::read_to_string(path)?)?;
    if record.format != FUSED_FORMAT {
        return Err(ColinError::InvalidConfig(format!(
            "unsupported fused format {:?}",
            record.format
        )));
    }
    Ok(FusedAdapter {
        d: record.d,
        h: record.h,
        w_down: record.w_down,
        w_up: record.w_up,
        b_down: record.b_down,
        b_up: record.b_up,
        dw_kernel: record.dw_kernel,
        dw_bias: record.dw_bias,
    })
}
