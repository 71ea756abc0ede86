use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GroupFault {
    #[error("parallel reduction requires single writeback index")]
    MixedIndex,
    #[error("segment reduction requires non-decreasing indices")]
    DecreasingIndex,
    #[error("writeback index {0} out of bounds")]
    OutOfBounds(usize),
    #[error("group arrays differ in length")]
    Length,
}

fn check_len(active: &[bool], idx: &[usize], val: &[f64]) -> Result<(), GroupFault> {
    if active.len() == idx.len() && idx.len() == val.len() {
        Ok(())
    } else {
        Err(GroupFault::Length)
    }
}

/// Writebacks of a parallel reduction: at most one `(idx, sum)`.
pub fn parallel_plan(active: &[bool], idx: &[usize], val: &[f64]) -> Result<Vec<(usize, f64)>, GroupFault> {
    check_len(active, idx, val)?;
    let mut lanes = (0..active.len()).filter(|&l| active[l]);
    let Some(first) = lanes.next() else {
        return Ok(Vec::new());
    };
    let mut sum = val[first];
    for l in lanes {
        if idx[l] != idx[first] {
            return Err(GroupFault::MixedIndex);
        }
        sum += val[l];
    }
    Ok(vec![(idx[first], sum)])
}

/// Writebacks of a segment reduction: one `(idx, run total)` per run of
/// equal indices, from the last lane of the run.
pub fn segment_plan(active: &[bool], idx: &[usize], val: &[f64]) -> Result<Vec<(usize, f64)>, GroupFault> {
    check_len(active, idx, val)?;
    let mut out: Vec<(usize, f64)> = Vec::new();
    for l in (0..active.len()).filter(|&l| active[l]) {
        match out.last_mut() {
            Some((i, sum)) if *i == idx[l] => *sum += val[l],
            Some((i, _)) if *i > idx[l] => return Err(GroupFault::DecreasingIndex),
            _ => out.push((idx[l], val[l])),
        }
    }
    Ok(out)
}

fn apply(plan: &[(usize, f64)], c: &mut [f64]) -> Result<usize, GroupFault> {
    if let Some(&(i, _)) = plan.iter().find(|(i, _)| *i >= c.len()) {
        return Err(GroupFault::OutOfBounds(i));
    }
    for &(i, v) in plan {
        c[i] += v;
    }
    Ok(plan.len())
}

/// `C[idx] += sum of active vals`, applied once. All active lanes must
/// share `idx`. Returns the number of writebacks (0 or 1).
pub fn exec_atomic_add_group(active: &[bool], idx: &[usize], val: &[f64], c: &mut [f64]) -> Result<usize, GroupFault> {
    apply(&parallel_plan(active, idx, val)?, c)
}

/// Segmented sum over runs of equal `idx` (non-decreasing across active
/// lanes); each run's last lane adds the run total. Returns the number of
/// writebacks.
pub fn exec_seg_reduce_group(active: &[bool], idx: &[usize], val: &[f64], c: &mut [f64]) -> Result<usize, GroupFault> {
    apply(&segment_plan(active, idx, val)?, c)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn atomic_add_group_examples() {
        let mut c = vec![0.0; 5];
        assert_eq!(exec_atomic_add_group(&[true; 4], &[3; 4], &[1.0, 2.0, 3.0, 4.0], &mut c), Ok(1));
        assert_eq!(c[3], 10.0);
        let mut c = vec![0.0; 2];
        exec_atomic_add_group(&[true, false], &[1, 0], &[5.0, 9.0], &mut c).unwrap();
        assert_eq!(c, [0.0, 5.0]);
        assert_eq!(exec_atomic_add_group(&[true, true], &[0, 1], &[1.0, 1.0], &mut c), Err(GroupFault::MixedIndex));
        assert_eq!(exec_atomic_add_group(&[false; 4], &[0; 4], &[1.0; 4], &mut c), Ok(0));
    }

    #[test]
    fn seg_reduce_group_examples() {
        let mut c = vec![0.0; 8];
        assert_eq!(exec_seg_reduce_group(&[true; 4], &[5, 5, 7, 7], &[1.0, 2.0, 3.0, 4.0], &mut c), Ok(2));
        assert_eq!((c[5], c[7]), (3.0, 7.0));
        let mut c = vec![0.0; 4];
        assert_eq!(exec_seg_reduce_group(&[true; 4], &[0, 1, 2, 3], &[1.0, 2.0, 3.0, 4.0], &mut c), Ok(4));
        assert_eq!(c, [1.0, 2.0, 3.0, 4.0]);
        assert_eq!(exec_seg_reduce_group(&[true; 2], &[2, 1], &[1.0, 1.0], &mut c), Err(GroupFault::DecreasingIndex));
        assert_eq!(exec_seg_reduce_group(&[true], &[9], &[1.0], &mut c), Err(GroupFault::OutOfBounds(9)));
    }
}
