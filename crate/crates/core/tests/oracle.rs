use proptest::prelude::*;
use segspmm::pipeline::{build_kernel, verify};
use segspmm::sim::{run, run_with, SimOptions};
use segspmm::space::{enumerate_space, family, AtomicParallelismPoint, DataKind, KernelConfig};
use segspmm::sparse::{dense_spmm_oracle, random_csr, random_dense, CsrMatrix, DenseMatrix};

fn templated_points() -> Vec<AtomicParallelismPoint> {
    enumerate_space(&[2, 4, 8, 16, 32], &[1, 2, 4], &[1, 2, 4, 8, 16, 32])
        .into_iter()
        .filter(|p| family(p).is_some())
        .collect()
}

fn fits(p: &AtomicParallelismPoint, n: u32) -> bool {
    n.is_multiple_of(p.col.param())
}

#[test]
fn identity_is_exact_for_every_point() {
    let a = CsrMatrix::identity(24);
    let b = random_dense(24, 4, 5);
    for p in templated_points().into_iter().filter(|p| fits(p, 4)) {
        let v = verify(&KernelConfig::new(p, 4), &a, &b, 1e-4, SimOptions::default()).unwrap();
        assert_eq!(v.max_rel_error, 0.0, "{p}");
    }
}

#[test]
fn empty_matrix_leaves_c_untouched() {
    let a = CsrMatrix::empty(20, 12);
    let b = random_dense(12, 8, 1);
    let c0 = random_dense(20, 8, 2);
    for p in templated_points().into_iter().filter(|p| fits(p, 8)) {
        let k = build_kernel(&KernelConfig::new(p, 8), &a).unwrap();
        let (c, m) = run(&k, &a, &b, &c0).unwrap();
        assert_eq!(c, c0, "{p}");
        if p.kind == DataKind::Nnz {
            assert_eq!(m.atomic_ops, 0, "{p}");
        }
    }
}

#[test]
fn accumulates_into_nonzero_c() {
    let a = random_csr(30, 20, 0.3, 8);
    let b = random_dense(20, 4, 8);
    let c0 = random_dense(30, 4, 9);
    let mut want = dense_spmm_oracle(&a, &b).unwrap();
    want.vals.iter_mut().zip(&c0.vals).for_each(|(w, c)| *w += c);
    for p in templated_points().into_iter().filter(|p| fits(p, 4)) {
        let (c, _) = run(&build_kernel(&KernelConfig::new(p, 4), &a).unwrap(), &a, &b, &c0).unwrap();
        assert!(c.max_rel_error(&want) < 1e-12, "{p}");
    }
}

#[test]
fn runs_are_bit_identical() {
    let a = random_csr(48, 48, 0.15, 3);
    let b = random_dense(48, 8, 3);
    let c0 = DenseMatrix::zeros(48, 8);
    for p in ["nnz:1,col:2,r:16", "row:1/8,col:1,r:8", "nnz:8,col:4,r:1", "row:4,col:1,r:1"] {
        let k = build_kernel(&KernelConfig::new(p.parse().unwrap(), 8), &a).unwrap();
        let first = run(&k, &a, &b, &c0).unwrap();
        assert_eq!(first, run(&k, &a, &b, &c0).unwrap(), "{p}");
        let par = run_with(&k, &a, &b, &c0, SimOptions { parallel_blocks: true, ..Default::default() }).unwrap();
        assert_eq!(first, par, "{p}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn random_matrices_match_oracle(
        rows in 1usize..70,
        cols in 1usize..70,
        density in 0.0f64..0.6,
        seed in any::<u64>(),
        pick in any::<prop::sample::Index>(),
        n in prop::sample::select(vec![4u32, 8, 16]),
    ) {
        let points: Vec<_> = templated_points().into_iter().filter(|p| fits(p, n)).collect();
        let p = points[pick.index(points.len())];
        let a = random_csr(rows, cols, density, seed);
        let b = random_dense(cols, n as usize, seed ^ 1);
        let v = verify(&KernelConfig::new(p, n), &a, &b, 1e-4, SimOptions::default()).unwrap();
        prop_assert!(v.max_rel_error <= 1e-10, "{} err {}", p, v.max_rel_error);
    }
}
