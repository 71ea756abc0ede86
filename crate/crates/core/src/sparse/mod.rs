//! Sparse and dense matrix containers, Matrix Market ingestion, random
//! generation and the serial reference SpMM.

mod mtx;

pub use mtx::{load_matrix_market, parse_matrix_market};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SparseError {
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("invalid matrix: {0}")]
    Invalid(String),
}

/// Compressed sparse row matrix: a dense row level over a compressed
/// column level.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CsrMatrix {
    pub num_rows: usize,
    pub num_cols: usize,
    pub row_ptr: Vec<usize>,
    pub col_idx: Vec<usize>,
    pub vals: Vec<f64>,
}

impl CsrMatrix {
    /// Builds a matrix from raw arrays and checks every structural invariant.
    pub fn new(
        num_rows: usize,
        num_cols: usize,
        row_ptr: Vec<usize>,
        col_idx: Vec<usize>,
        vals: Vec<f64>,
    ) -> Result<Self, SparseError> {
        let m = CsrMatrix { num_rows, num_cols, row_ptr, col_idx, vals };
        m.check_invariants()?;
        Ok(m)
    }

    /// An `num_rows x num_cols` matrix without stored entries.
    pub fn empty(num_rows: usize, num_cols: usize) -> Self {
        CsrMatrix { num_rows, num_cols, row_ptr: vec![0; num_rows + 1], col_idx: Vec::new(), vals: Vec::new() }
    }

    pub fn identity(n: usize) -> Self {
        CsrMatrix {
            num_rows: n,
            num_cols: n,
            row_ptr: (0..=n).collect(),
            col_idx: (0..n).collect(),
            vals: vec![1.0; n],
        }
    }

    /// Assembles a matrix from `(row, col, value)` triples. Duplicate
    /// coordinates are summed and rows come out sorted by column.
    pub fn from_triplets(
        num_rows: usize,
        num_cols: usize,
        triplets: &[(usize, usize, f64)],
    ) -> Result<Self, SparseError> {
        let mut sorted: Vec<(usize, usize, f64)> = Vec::with_capacity(triplets.len());
        for &(r, c, v) in triplets {
            if r >= num_rows || c >= num_cols {
                return Err(SparseError::Invalid(format!("coordinate ({r}, {c}) outside {num_rows}x{num_cols}")));
            }
            sorted.push((r, c, v));
        }
        // stable sort keeps the input order of duplicates, so the summation
        // order is the file order
        sorted.sort_by_key(|&(r, c, _)| (r, c));

        let mut row_ptr = vec![0usize; num_rows + 1];
        let mut col_idx = Vec::with_capacity(sorted.len());
        let mut vals: Vec<f64> = Vec::with_capacity(sorted.len());
        let mut last: Option<(usize, usize)> = None;
        for (r, c, v) in sorted {
            if last == Some((r, c)) {
                *vals.last_mut().unwrap() += v;
                continue;
            }
            row_ptr[r + 1] += 1;
            col_idx.push(c);
            vals.push(v);
            last = Some((r, c));
        }
        for r in 0..num_rows {
            row_ptr[r + 1] += row_ptr[r];
        }
        Ok(CsrMatrix { num_rows, num_cols, row_ptr, col_idx, vals })
    }

    pub fn nnz(&self) -> usize {
        self.col_idx.len()
    }

    pub fn row_len(&self, row: usize) -> usize {
        self.row_ptr[row + 1] - self.row_ptr[row]
    }

    pub fn check_invariants(&self) -> Result<(), SparseError> {
        let bad = |msg: String| Err(SparseError::Invalid(msg));
        if self.row_ptr.len() != self.num_rows + 1 {
            return bad(format!("row_ptr has length {}, expected {}", self.row_ptr.len(), self.num_rows + 1));
        }
        if self.row_ptr[0] != 0 {
            return bad("row_ptr[0] must be 0".into());
        }
        if self.col_idx.len() != self.vals.len() {
            return bad("col_idx and vals differ in length".into());
        }
        if self.row_ptr[self.num_rows] != self.col_idx.len() {
            return bad("row_ptr[num_rows] must equal nnz".into());
        }
        for r in 0..self.num_rows {
            let (lo, hi) = (self.row_ptr[r], self.row_ptr[r + 1]);
            if lo > hi {
                return bad(format!("row_ptr decreases at row {r}"));
            }
            for p in lo..hi {
                if self.col_idx[p] >= self.num_cols {
                    return bad(format!("column {} out of range in row {r}", self.col_idx[p]));
                }
                if p > lo && self.col_idx[p] <= self.col_idx[p - 1] {
                    return bad(format!("columns not strictly increasing in row {r}"));
                }
            }
        }
        Ok(())
    }

    pub fn to_dense(&self) -> DenseMatrix {
        let mut d = DenseMatrix::zeros(self.num_rows, self.num_cols);
        for r in 0..self.num_rows {
            for p in self.row_ptr[r]..self.row_ptr[r + 1] {
                d.set(r, self.col_idx[p], self.vals[p]);
            }
        }
        d
    }
}

/// Row-major dense matrix.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DenseMatrix {
    pub num_rows: usize,
    pub num_cols: usize,
    pub vals: Vec<f64>,
}

impl DenseMatrix {
    pub fn zeros(num_rows: usize, num_cols: usize) -> Self {
        DenseMatrix { num_rows, num_cols, vals: vec![0.0; num_rows * num_cols] }
    }

    pub fn from_vec(num_rows: usize, num_cols: usize, vals: Vec<f64>) -> Result<Self, SparseError> {
        if vals.len() != num_rows * num_cols {
            return Err(SparseError::DimensionMismatch(format!(
                "{} values for a {num_rows}x{num_cols} matrix",
                vals.len()
            )));
        }
        Ok(DenseMatrix { num_rows, num_cols, vals })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self, SparseError> {
        let num_cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != num_cols) {
            return Err(SparseError::DimensionMismatch("ragged rows".into()));
        }
        Ok(DenseMatrix { num_rows: rows.len(), num_cols, vals: rows.concat() })
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.vals[r * self.num_cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.vals[r * self.num_cols + c] = v;
    }

    /// Largest elementwise error scaled as `|a - b| / (|b| + 1)`, with `b`
    /// taken from `reference`. Any NaN or shape mismatch gives infinity.
    pub fn max_rel_error(&self, reference: &DenseMatrix) -> f64 {
        if self.num_rows != reference.num_rows || self.num_cols != reference.num_cols {
            return f64::INFINITY;
        }
        self.vals
            .iter()
            .zip(&reference.vals)
            .map(|(a, b)| {
                let e = (a - b).abs() / (b.abs() + 1.0);
                if e.is_nan() {
                    f64::INFINITY
                } else {
                    e
                }
            })
            .fold(0.0, f64::max)
    }

    /// Writes the matrix as whitespace separated text, one row per line.
    pub fn to_text(&self) -> String {
        let mut out = format!("{} {}\n", self.num_rows, self.num_cols);
        for r in 0..self.num_rows {
            let row: Vec<String> = (0..self.num_cols).map(|c| format!("{:e}", self.get(r, c))).collect();
            out.push_str(&row.join(" "));
            out.push('\n');
        }
        out
    }
}

/// Random CSR matrix where each coordinate is stored independently with
/// probability `density`. Values are uniform in `[-1, 1)`. The generator is
/// ChaCha8 so the output is stable across platforms for a given seed.
pub fn random_csr(num_rows: usize, num_cols: usize, density: f64, seed: u64) -> CsrMatrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut row_ptr = Vec::with_capacity(num_rows + 1);
    let mut col_idx = Vec::new();
    let mut vals = Vec::new();
    row_ptr.push(0);
    for _ in 0..num_rows {
        for c in 0..num_cols {
            if rng.gen::<f64>() < density {
                col_idx.push(c);
                vals.push(rng.gen_range(-1.0..1.0));
            }
        }
        row_ptr.push(col_idx.len());
    }
    CsrMatrix { num_rows, num_cols, row_ptr, col_idx, vals }
}

pub fn random_dense(num_rows: usize, num_cols: usize, seed: u64) -> DenseMatrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let vals = (0..num_rows * num_cols).map(|_| rng.gen_range(-1.0..1.0)).collect();
    DenseMatrix { num_rows, num_cols, vals }
}

/// Reference `C = A * B`, accumulated serially in ascending `(i, j, k)` order.
pub fn dense_spmm_oracle(a: &CsrMatrix, b: &DenseMatrix) -> Result<DenseMatrix, SparseError> {
    if a.num_cols != b.num_rows {
        return Err(SparseError::DimensionMismatch(format!(
            "A is {}x{} but B is {}x{}",
            a.num_rows, a.num_cols, b.num_rows, b.num_cols
        )));
    }
    let n = b.num_cols;
    let mut c = DenseMatrix::zeros(a.num_rows, n);
    for i in 0..a.num_rows {
        for p in a.row_ptr[i]..a.row_ptr[i + 1] {
            let (j, v) = (a.col_idx[p], a.vals[p]);
            for k in 0..n {
                c.vals[i * n + k] += v * b.vals[j * n + k];
            }
        }
    }
    Ok(c)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn random_density_one_is_full() {
        let m = random_csr(4, 4, 1.0, 11);
        assert_eq!(m.nnz(), 16);
        m.check_invariants().unwrap();
    }

    #[test]
    fn random_is_reproducible() {
        assert_eq!(random_csr(4, 4, 0.25, 7), random_csr(4, 4, 0.25, 7));
        assert_ne!(random_csr(16, 16, 0.25, 7), random_csr(16, 16, 0.25, 8));
    }

    #[test]
    fn random_sparse_keeps_invariants() {
        let m = random_csr(64, 64, 0.05, 3);
        assert!(m.nnz() <= 64 * 64);
        m.check_invariants().unwrap();
    }

    #[test]
    fn oracle_identity_returns_b() {
        let b = random_dense(3, 5, 1);
        let c = dense_spmm_oracle(&CsrMatrix::identity(3), &b).unwrap();
        assert_eq!(c, b);
    }

    #[test]
    fn oracle_small_hand_case() {
        // [[1,0],[2,3]] * [[1],[1]] = [[1],[5]]
        let a = CsrMatrix::new(2, 2, vec![0, 1, 3], vec![0, 0, 1], vec![1.0, 2.0, 3.0]).unwrap();
        let b = DenseMatrix::from_rows(&[vec![1.0], vec![1.0]]).unwrap();
        let c = dense_spmm_oracle(&a, &b).unwrap();
        assert_eq!(c.vals, vec![1.0, 5.0]);
    }

    #[test]
    fn oracle_empty_rows_give_zeros() {
        let c = dense_spmm_oracle(&CsrMatrix::empty(5, 3), &random_dense(3, 4, 2)).unwrap();
        assert!(c.vals.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn oracle_rejects_mismatch() {
        let err = dense_spmm_oracle(&CsrMatrix::identity(3), &DenseMatrix::zeros(4, 2));
        assert!(matches!(err, Err(SparseError::DimensionMismatch(_))));
    }

    #[test]
    fn new_rejects_unsorted_row() {
        let err = CsrMatrix::new(1, 3, vec![0, 2], vec![2, 1], vec![1.0, 1.0]);
        assert!(err.is_err());
    }

    #[test]
    fn triplets_sum_duplicates() {
        let m = CsrMatrix::from_triplets(2, 2, &[(0, 0, 2.0), (1, 1, 1.0), (0, 0, 3.0)]).unwrap();
        assert_eq!(m.row_ptr, vec![0, 1, 2]);
        assert_eq!(m.vals, vec![5.0, 1.0]);
    }
}
