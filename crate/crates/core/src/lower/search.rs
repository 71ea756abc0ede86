use crate::sparse::CsrMatrix;

/// Largest `p` in `[lo, hi)` with `array[p] <= target`, assuming `array`
/// is non-decreasing there. Returns `lo` when no such `p` exists or the
/// range is empty.
pub fn binary_search_before(array: &[usize], lo: usize, hi: usize, target: usize) -> usize {
    let (mut lo_, mut hi_) = (lo, hi);
    if hi_ <= lo_ {
        return lo;
    }
    // invariant: answer in [lo_, hi_)
    while hi_ - lo_ > 1 {
        let mid = lo_ + (hi_ - lo_) / 2;
        if array[mid] <= target {
            lo_ = mid;
        } else {
            hi_ = mid;
        }
    }
    lo_
}

/// Steps charged for a search over a window of `len` entries.
pub fn search_cost(len: usize) -> u64 {
    if len <= 1 {
        0
    } else {
        (usize::BITS - (len - 1).leading_zeros()) as u64
    }
}

/// Row window start for each block of `nnz_per_block` non-zeros, plus one
/// trailing entry: `grid + 1` values.
pub fn compute_block_starts(a: &CsrMatrix, nnz_per_block: usize) -> Vec<usize> {
    assert!(nnz_per_block >= 1, "nnz_per_block must be positive");
    let grid = a.nnz().div_ceil(nnz_per_block);
    (0..=grid).map(|b| binary_search_before(&a.row_ptr, 0, a.num_rows + 1, b * nnz_per_block)).collect()
}
