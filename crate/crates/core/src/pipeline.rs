//! End-to-end helpers: point to kernel, kernel to verified result.

use thiserror::Error;

use crate::lower::{lower, LowerError, LoweredKernel};
use crate::sim::{run_with, SimError, SimMetrics, SimOptions};
use crate::space::{algorithm_template, KernelConfig, TemplateError};
use crate::sparse::{dense_spmm_oracle, random_csr, CsrMatrix, DenseMatrix, SparseError};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Template(#[from] TemplateError),
    #[error(transparent)]
    Lower(#[from] LowerError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Sparse(#[from] SparseError),
}

pub fn build_kernel(config: &KernelConfig, a: &CsrMatrix) -> Result<LoweredKernel, PipelineError> {
    let cin = algorithm_template(&config.point, config)?;
    Ok(lower(&cin, a, &config.params())?)
}

#[derive(Clone, Debug, PartialEq)]
pub struct Verification {
    pub max_rel_error: f64,
    pub passed: bool,
    pub metrics: SimMetrics,
}

/// Simulates `A * B` for `config` and compares against the serial oracle.
pub fn verify(
    config: &KernelConfig,
    a: &CsrMatrix,
    b: &DenseMatrix,
    tolerance: f64,
    opts: SimOptions,
) -> Result<Verification, PipelineError> {
    let kernel = build_kernel(config, a)?;
    let (c, metrics) = run_with(&kernel, a, b, &DenseMatrix::zeros(a.num_rows, b.num_cols), opts)?;
    let max_rel_error = c.max_rel_error(&dense_spmm_oracle(a, b)?);
    Ok(Verification { max_rel_error, passed: max_rel_error <= tolerance, metrics })
}

/// Named test matrices: random shapes from 16x16 to 64x64 at densities
/// 0.05 to 0.5, followed by structured edge cases.
pub fn corpus(seed: u64) -> Vec<(String, CsrMatrix)> {
    let shapes = [(16, 16), (24, 40), (32, 32), (40, 24), (48, 48), (64, 64), (64, 16), (16, 64)];
    let densities = [0.05, 0.2, 0.5];
    let mut out = Vec::new();
    for (si, &(r, c)) in shapes.iter().enumerate() {
        for (di, &d) in densities.iter().enumerate() {
            if (si + di) % 2 == 0 || si < 2 {
                let s = seed.wrapping_add((si * densities.len() + di) as u64);
                out.push((format!("random_{r}x{c}_d{d}"), random_csr(r, c, d, s)));
            }
        }
    }
    let dense_row: Vec<_> = (0..40).map(|j| (7, j, 1.0 + j as f64 / 8.0)).collect();
    let single_row: Vec<_> = (0..48).step_by(3).map(|j| (0, j, j as f64 - 20.0)).collect();
    let single_col: Vec<_> = (0..48).step_by(2).map(|i| (i, 0, 0.5 + i as f64)).collect();
    let from = |r, c, t: &[(usize, usize, f64)]| CsrMatrix::from_triplets(r, c, t).expect("valid triplets");
    out.push(("identity_32".into(), CsrMatrix::identity(32)));
    out.push(("empty_rows_32x32".into(), CsrMatrix::empty(32, 32)));
    out.push(("single_dense_row_40x40".into(), from(40, 40, &dense_row)));
    out.push(("single_row_1x48".into(), from(1, 48, &single_row)));
    out.push(("single_col_48x1".into(), from(48, 1, &single_col)));
    out
}
