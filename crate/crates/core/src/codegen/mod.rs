//! CUDA-flavoured source text for lowered kernels.

use std::fmt::Write as _;

use crate::lower::{LlirNode, LoweredKernel, MacroKind, Ty};

pub const KERNEL_NAME: &str = "spmm_kernel";

const HEADER: &str = "\
#include <cuda_runtime.h>

// Largest p in [lo, hi) with array[p] <= target.
__device__ int binarySearchBefore(const int* array, int lo, int hi, int target);

// array[idx] += sum of value over the G lanes; all lanes share idx.
template <typename T, int G>
__device__ void atomicAddGroup(T* array, int idx, T value);

// Segmented sum over runs of equal idx; the last lane of each run adds its total.
template <typename T, int G>
__device__ void segReduceGroup(T* array, int idx, T value);
";

const PARAMS: [&str; 10] = [
    "int A1_dimension",
    "int A2_dimension",
    "int B2_dimension",
    "int C2_dimension",
    "const int* __restrict__ A2_pos",
    "const int* __restrict__ A2_crd",
    "const double* __restrict__ A_vals",
    "const double* __restrict__ B_vals",
    "double* __restrict__ C_vals",
    "const int* __restrict__ i_blockStarts",
];

/// Renders `kernel` as a self-contained `.cu` translation unit. The output
/// depends only on the kernel, so equal kernels give equal bytes.
pub fn emit_cuda(kernel: &LoweredKernel) -> String {
    let mut out = String::from(HEADER);
    let _ = writeln!(out);
    let _ = writeln!(out, "// launch: grid = {}, block = {}, N = {}", kernel.grid_size, kernel.block_size, kernel.n);
    let _ = writeln!(out, "__global__ void {KERNEL_NAME}(\n    {}) {{", PARAMS.join(",\n    "));
    if kernel.active_lanes < kernel.block_size {
        let _ = writeln!(out, "  if (threadIdx.x >= {}) {{\n    return;\n  }}", kernel.active_lanes);
    }
    for n in &kernel.body {
        node(&mut out, n, 1);
    }
    out.push_str("}\n");
    out
}

fn node(out: &mut String, n: &LlirNode, depth: usize) {
    let pad = "  ".repeat(depth);
    let block = |out: &mut String, body: &[LlirNode]| {
        for n in body {
            node(out, n, depth + 1);
        }
    };
    match n {
        LlirNode::ForLoop { var, begin, end, step, body } => {
            let inc = if *step == 1 { format!("{var}++") } else { format!("{var} += {step}") };
            let _ = writeln!(out, "{pad}for (int {var} = {begin}; {var} < {end}; {inc}) {{");
            block(out, body);
            let _ = writeln!(out, "{pad}}}");
        }
        LlirNode::WhileLoop { cond, body } => {
            let _ = writeln!(out, "{pad}while ({cond}) {{");
            block(out, body);
            let _ = writeln!(out, "{pad}}}");
        }
        LlirNode::If { cond, then, els, .. } => {
            let _ = writeln!(out, "{pad}if ({cond}) {{");
            block(out, then);
            if let Some(els) = els {
                let _ = writeln!(out, "{pad}}} else {{");
                block(out, els);
            }
            let _ = writeln!(out, "{pad}}}");
        }
        LlirNode::VarDecl { name, ty, init } => {
            let ty = match ty {
                Ty::Int => "int",
                Ty::Real => "double",
            };
            let _ = writeln!(out, "{pad}{ty} {name} = {init};");
        }
        LlirNode::Assign { name, value } => {
            let _ = writeln!(out, "{pad}{name} = {value};");
        }
        LlirNode::Store { array, index, value } => {
            let _ = writeln!(out, "{pad}{}[{index}] = {value};", array.name());
        }
        LlirNode::AtomicAdd { array, index, value } => {
            let _ = writeln!(out, "{pad}atomicAdd(&{}[{index}], {value});", array.name());
        }
        LlirNode::Macro { kind, group_size, array, index, value } => {
            let name = match kind {
                MacroKind::AtomicAddGroup => "atomicAddGroup",
                MacroKind::SegReduceGroup => "segReduceGroup",
            };
            let _ = writeln!(out, "{pad}{name}<double,{group_size}>({}, {index}, {value});", array.name());
        }
        LlirNode::Break => {
            let _ = writeln!(out, "{pad}break;");
        }
    }
}

/// Shallow syntax check: balanced delimiters, and every line inside a
/// function body is a statement, a block opener or a closer.
pub fn check_c_like(src: &str) -> Result<(), String> {
    let mut stack = Vec::new();
    for (ln, line) in src.lines().enumerate() {
        let line = line.split("//").next().unwrap_or("");
        for ch in line.chars() {
            match ch {
                '(' | '{' | '[' => stack.push(ch),
                ')' | '}' | ']' => {
                    let open = match ch {
                        ')' => '(',
                        '}' => '{',
                        _ => '[',
                    };
                    if stack.pop() != Some(open) {
                        return Err(format!("line {}: unbalanced '{ch}'", ln + 1));
                    }
                }
                _ => {}
            }
        }
        let t = line.trim();
        let in_body = stack.contains(&'{') && !stack.contains(&'(');
        if in_body && !t.is_empty() && !(t.ends_with(';') || t.ends_with('{') || t.ends_with('}')) {
            return Err(format!("line {}: unterminated statement '{t}'", ln + 1));
        }
    }
    if stack.is_empty() {
        Ok(())
    } else {
        Err(format!("unclosed {:?}", stack))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lower::lower;
    use crate::space::{algorithm_template, AtomicParallelismPoint, KernelConfig};
    use crate::sparse::random_csr;

    fn emit(point: &str) -> String {
        let a = random_csr(32, 32, 0.2, 4);
        let p: AtomicParallelismPoint = point.parse().unwrap();
        let cfg = KernelConfig::new(p, 4);
        emit_cuda(&lower(&algorithm_template(&p, &cfg).unwrap(), &a, &cfg.params()).unwrap())
    }

    #[test]
    fn serial_uses_atomics_and_break() {
        let s = emit("nnz:32,col:1,r:1");
        assert!(s.contains("atomicAdd(&C_vals[kC], tnnzC);"), "{s}");
        assert!(s.contains("break;"));
        assert!(s.contains("blockIdx.x") && s.contains("threadIdx.x"));
    }

    #[test]
    fn segment_uses_macro_and_zero_extension() {
        let s = emit("nnz:1,col:1,r:32");
        assert!(s.contains("segReduceGroup<double,32>(C_vals, kC, tmp);"), "{s}");
        assert!(s.contains("tmp = 0.0;"));
        assert!(!s.contains("break;"));
        assert_eq!(s.matches("__device__ void segReduceGroup").count(), 1);
    }

    #[test]
    fn output_is_deterministic_and_c_like() {
        for p in ["nnz:32,col:1,r:1", "row:1,col:1,r:1", "row:1/32,col:1,r:32", "nnz:1,col:1,r:32", "nnz:1,col:1,r:1"] {
            let s = emit(p);
            assert_eq!(s, emit(p));
            check_c_like(&s).unwrap_or_else(|e| panic!("{p}: {e}\n{s}"));
        }
    }

    #[test]
    fn checker_rejects_unbalanced() {
        assert!(check_c_like("void f() {\n  int x = 1;\n").is_err());
        assert!(check_c_like("void f() {\n  int x = (1;\n}\n").is_err());
        assert!(check_c_like("void f() {\n  int x = 1\n}\n").is_err());
    }
}
