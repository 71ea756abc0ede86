//! Lock-step SIMT interpreter for lowered kernels.

mod exec;
mod group;

use std::collections::{BTreeMap, HashSet};

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

pub use group::{exec_atomic_add_group, exec_seg_reduce_group, parallel_plan, segment_plan, GroupFault};

use crate::lower::{LoweredKernel, WARP_SIZE};
use crate::sparse::{CsrMatrix, DenseMatrix};
use exec::{compile, COut, Inputs, Machine, Write};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct SimOptions {
    /// Round every real result to f32.
    pub single_precision: bool,
    /// Run blocks on a thread pool. Output and metrics are identical to the
    /// serial run; blocks that read another block's output force a serial
    /// replay.
    pub parallel_blocks: bool,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct SimMetrics {
    /// Steps of the slowest warp.
    pub max_warp_steps: u64,
    pub total_steps: u64,
    /// Lane-level atomics plus group writebacks.
    pub atomic_ops: u64,
    /// Lane-steps spent masked off or on zero-extension filler.
    pub idle_lane_steps: u64,
    /// Steps per global warp id.
    pub per_warp_steps: BTreeMap<u64, u64>,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("fault in block {block}, warp {warp}, lane {lane} at {node}: {msg}")]
    Fault { block: usize, warp: usize, lane: usize, node: String, msg: String },
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("invalid program: {0}")]
    Program(String),
}

pub fn run(
    kernel: &LoweredKernel,
    a: &CsrMatrix,
    b: &DenseMatrix,
    c0: &DenseMatrix,
) -> Result<(DenseMatrix, SimMetrics), SimError> {
    run_with(kernel, a, b, c0, SimOptions::default())
}

fn check_shapes(kernel: &LoweredKernel, a: &CsrMatrix, b: &DenseMatrix, c0: &DenseMatrix) -> Result<(), SimError> {
    let mut bad = Vec::new();
    if kernel.rows != a.num_rows || kernel.cols != a.num_cols || kernel.nnz != a.nnz() {
        bad.push(format!(
            "kernel built for {}x{} with {} nnz, got {}x{} with {} nnz",
            kernel.rows,
            kernel.cols,
            kernel.nnz,
            a.num_rows,
            a.num_cols,
            a.nnz()
        ));
    }
    if b.num_rows != a.num_cols || b.num_cols != kernel.n {
        bad.push(format!("B is {}x{}, expected {}x{}", b.num_rows, b.num_cols, a.num_cols, kernel.n));
    }
    if c0.num_rows != a.num_rows || c0.num_cols != kernel.n {
        bad.push(format!("C is {}x{}, expected {}x{}", c0.num_rows, c0.num_cols, a.num_rows, kernel.n));
    }
    if !kernel.block_size.is_multiple_of(WARP_SIZE) || kernel.active_lanes > kernel.block_size {
        bad.push(format!("block of {} with {} active lanes", kernel.block_size, kernel.active_lanes));
    }
    if bad.is_empty() {
        Ok(())
    } else {
        Err(SimError::Shape(bad.join("; ")))
    }
}

/// Runs `kernel` on `C = c0 + A * B`. Blocks and warps execute in index
/// order, and atomics within a warp apply in lane order.
pub fn run_with(
    kernel: &LoweredKernel,
    a: &CsrMatrix,
    b: &DenseMatrix,
    c0: &DenseMatrix,
    opts: SimOptions,
) -> Result<(DenseMatrix, SimMetrics), SimError> {
    check_shapes(kernel, a, b, c0)?;
    let dims = [a.num_rows as i64, a.num_cols as i64, kernel.n as i64, kernel.n as i64];
    let prog = compile(&kernel.body, dims)?;
    let to_i = |v: &[usize]| v.iter().map(|&x| x as i64).collect::<Vec<_>>();
    let (a_pos, a_crd, starts) = (to_i(&a.row_ptr), to_i(&a.col_idx), to_i(&kernel.block_starts));
    let inputs = Inputs { a_pos: &a_pos, a_crd: &a_crd, a_vals: &a.vals, b_vals: &b.vals, block_starts: &starts };
    let machine = Machine { prog: &prog, inputs: &inputs, opts };
    let mut c = c0.vals.clone();
    let round = |v: f64| if opts.single_precision { v as f32 as f64 } else { v };
    if opts.single_precision {
        c.iter_mut().for_each(|v| *v = round(*v));
    }

    let serial = |c: &mut Vec<f64>| {
        let mut out = COut::Direct(c);
        (0..kernel.grid_size)
            .map(|blk| machine.run_block(blk, kernel.block_size, kernel.active_lanes, &mut out))
            .collect::<Result<Vec<_>, _>>()
    };
    let stats = if opts.parallel_blocks {
        let base = c.clone();
        let results: Vec<_> = (0..kernel.grid_size)
            .into_par_iter()
            .map(|blk| {
                let mut out = COut::overlay(&base);
                let s = machine.run_block(blk, kernel.block_size, kernel.active_lanes, &mut out)?;
                let COut::Overlay { log, base_reads, .. } = out else { unreachable!() };
                Ok((s, log, base_reads.into_inner()))
            })
            .collect::<Vec<Result<_, SimError>>>();
        let mut written = HashSet::new();
        let mut stats = Vec::with_capacity(results.len());
        let mut merged = c.clone();
        // Any fault is reproduced serially so the reported block matches.
        let mut conflict = results.iter().any(Result::is_err);
        for (s, log, reads) in results.into_iter().flatten() {
            if conflict || reads.iter().any(|i| written.contains(i)) {
                conflict = true;
                break;
            }
            for (i, w) in log {
                written.insert(i);
                merged[i] = match w {
                    Write::Add(v) => round(merged[i] + v),
                    Write::Set(v) => v,
                };
            }
            stats.push(s);
        }
        if conflict {
            // A block faulted or read a value an earlier block wrote.
            serial(&mut c)?
        } else {
            c = merged;
            stats
        }
    } else {
        serial(&mut c)?
    };

    let mut m = SimMetrics::default();
    let warps_per_block = (kernel.block_size / WARP_SIZE) as u64;
    for (blk, s) in stats.iter().enumerate() {
        for (w, &steps) in s.warp_steps.iter().enumerate() {
            m.per_warp_steps.insert(blk as u64 * warps_per_block + w as u64, steps);
            m.max_warp_steps = m.max_warp_steps.max(steps);
            m.total_steps += steps;
        }
        m.atomic_ops += s.atomic_ops;
        m.idle_lane_steps += s.idle_lane_steps;
    }
    let c = DenseMatrix::from_vec(a.num_rows, kernel.n, c).map_err(|e| SimError::Shape(e.to_string()))?;
    Ok((c, m))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lower::lower;
    use crate::space::{algorithm_template, AtomicParallelismPoint, KernelConfig};
    use crate::sparse::{dense_spmm_oracle, random_csr, random_dense};

    fn kernel(point: &str, a: &CsrMatrix, n: u32) -> LoweredKernel {
        let p: AtomicParallelismPoint = point.parse().unwrap();
        let cfg = KernelConfig::new(p, n);
        lower(&algorithm_template(&p, &cfg).unwrap(), a, &cfg.params()).unwrap()
    }

    #[test]
    fn matches_oracle_on_each_family() {
        let a = random_csr(40, 24, 0.2, 3);
        let b = random_dense(24, 4, 3);
        let want = dense_spmm_oracle(&a, &b).unwrap();
        for p in ["nnz:32,col:1,r:1", "row:1,col:1,r:1", "row:1/32,col:1,r:32", "nnz:1,col:1,r:32", "nnz:1,col:4,r:8"] {
            let (c, _) = run(&kernel(p, &a, 4), &a, &b, &DenseMatrix::zeros(40, 4)).unwrap();
            assert!(c.max_rel_error(&want) < 1e-12, "{p}");
        }
    }

    #[test]
    fn parallel_blocks_match_serial() {
        let a = random_csr(64, 64, 0.3, 9);
        let b = random_dense(64, 4, 9);
        let c0 = random_dense(64, 4, 10);
        for p in ["nnz:1,col:1,r:32", "row:1,col:1,r:1", "nnz:4,col:2,r:1"] {
            let k = kernel(p, &a, 4);
            let serial = run(&k, &a, &b, &c0).unwrap();
            let par = run_with(&k, &a, &b, &c0, SimOptions { parallel_blocks: true, ..Default::default() }).unwrap();
            assert_eq!(serial, par, "{p}");
        }
    }

    #[test]
    fn single_precision_rounds() {
        let a = random_csr(16, 16, 0.5, 1);
        let b = random_dense(16, 4, 1);
        let k = kernel("nnz:1,col:1,r:32", &a, 4);
        let opts = SimOptions { single_precision: true, ..Default::default() };
        let (c, _) = run_with(&k, &a, &b, &DenseMatrix::zeros(16, 4), opts).unwrap();
        assert!(c.vals.iter().all(|&v| v as f32 as f64 == v));
        assert!(c.max_rel_error(&dense_spmm_oracle(&a, &b).unwrap()) < 1e-4);
    }

    #[test]
    fn empty_grid_has_zero_metrics() {
        let a = CsrMatrix::empty(8, 8);
        let k = kernel("nnz:1,col:1,r:32", &a, 4);
        assert_eq!(k.grid_size, 0);
        let (c, m) = run(&k, &a, &DenseMatrix::zeros(8, 4), &DenseMatrix::zeros(8, 4)).unwrap();
        assert_eq!(m, SimMetrics::default());
        assert!(c.vals.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn dense_balanced_rows_share_one_step_count() {
        let a = random_csr(64, 32, 1.0, 0);
        let k = kernel("row:1,col:1,r:1", &a, 4);
        let (_, m) = run(&k, &a, &random_dense(32, 4, 0), &DenseMatrix::zeros(64, 4)).unwrap();
        let buckets: std::collections::BTreeSet<_> = m.per_warp_steps.values().collect();
        assert_eq!(buckets.len(), 1);
    }

    #[test]
    fn rejects_mismatched_shapes() {
        let a = random_csr(8, 8, 0.5, 2);
        let k = kernel("row:1,col:1,r:1", &a, 4);
        let err = run(&k, &a, &DenseMatrix::zeros(7, 4), &DenseMatrix::zeros(8, 4)).unwrap_err();
        assert!(matches!(err, SimError::Shape(_)));
        let other = CsrMatrix::identity(9);
        assert!(run(&k, &other, &DenseMatrix::zeros(9, 4), &DenseMatrix::zeros(9, 4)).is_err());
    }

    #[test]
    fn parallel_blocks_respect_cross_block_reads() {
        use crate::lower::{Array, BinOp, LExpr, LlirNode};
        let a = CsrMatrix::identity(32);
        let mut k = kernel("row:1,col:1,r:1", &a, 4);
        let c0 = LExpr::load(Array::CVals, LExpr::Int(0));
        k.grid_size = 4;
        k.body = vec![LlirNode::If {
            cond: LExpr::bin(BinOp::Eq, LExpr::ThreadIdx, LExpr::Int(0)),
            then: vec![LlirNode::Store {
                array: Array::CVals,
                index: LExpr::Int(0),
                value: LExpr::bin(BinOp::Add, c0, LExpr::Real(1.0)),
            }],
            els: None,
            kind: crate::lower::IfKind::Plain,
        }];
        let (b, z) = (DenseMatrix::zeros(32, 4), DenseMatrix::zeros(32, 4));
        let serial = run(&k, &a, &b, &z).unwrap();
        assert_eq!(serial.0.vals[0], 4.0);
        let par = run_with(&k, &a, &b, &z, SimOptions { parallel_blocks: true, ..Default::default() }).unwrap();
        assert_eq!(serial, par);
    }

    #[test]
    fn mixed_index_parallel_group_faults() {
        use crate::lower::{Array, LExpr, LlirNode, MacroKind};
        let a = CsrMatrix::identity(32);
        let mut k = kernel("row:1,col:1,r:1", &a, 4);
        k.body = vec![LlirNode::Macro {
            kind: MacroKind::AtomicAddGroup,
            group_size: 4,
            array: Array::CVals,
            index: LExpr::ThreadIdx,
            value: LExpr::Real(1.0),
        }];
        let err = run(&k, &a, &DenseMatrix::zeros(32, 4), &DenseMatrix::zeros(32, 4)).unwrap_err();
        assert!(err.to_string().contains("parallel reduction requires single writeback index"), "{err}");
    }
}
