use serde::{Deserialize, Serialize};

/// Thread-block sizes tried by the fine-grained tuner.
pub const BLOCK_SIZES: [u32; 3] = [128, 256, 512];
/// Exponents `e` of the row-worker scale `2^e`; negative values mean
/// `1/2^-e` of the row count.
pub const SCALE_EXPONENTS: std::ops::RangeInclusive<i32> = -2..=2;
const GROUP_SIZES: [u32; 5] = [2, 4, 8, 16, 32];

/// One configuration of the dgSPARSE-style tuning space.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct FineGrainedConfig {
    pub group_sz: u32,
    pub block_sz: u32,
    pub tile_sz: u32,
    pub worker_dim_r_scale: i32,
    pub coarsen_sz: u32,
    pub worker_sz: u32,
    pub thread_rw: u32,
}

/// Columns handled per thread: 4 when `n` is a multiple of 4, else 2 when
/// even, else 1.
pub fn coarsen_size(n: u32) -> u32 {
    if n.is_multiple_of(4) {
        4
    } else if n.is_multiple_of(2) {
        2
    } else {
        1
    }
}

/// All configurations for a dense operand with `n` columns, in
/// lexicographic field order.
pub fn enumerate_fine_grained(n: u32) -> Vec<FineGrainedConfig> {
    let coarsen_sz = coarsen_size(n);
    let max_tile = 32.max(n.next_power_of_two());
    let mut out = Vec::new();
    for group_sz in GROUP_SIZES {
        for block_sz in BLOCK_SIZES {
            let tiles = std::iter::successors(Some(group_sz), |t| Some(t * 2)).take_while(|&t| t <= max_tile);
            for tile_sz in tiles {
                if n.min(tile_sz) < coarsen_sz {
                    continue;
                }
                for worker_dim_r_scale in SCALE_EXPONENTS {
                    out.push(FineGrainedConfig {
                        group_sz,
                        block_sz,
                        tile_sz,
                        worker_dim_r_scale,
                        coarsen_sz,
                        worker_sz: group_sz,
                        thread_rw: 1,
                    });
                }
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn coarsen_formula() {
        assert_eq!(coarsen_size(4), 4);
        assert_eq!(coarsen_size(6), 2);
        assert_eq!(coarsen_size(7), 1);
        assert!(enumerate_fine_grained(4).iter().all(|c| c.coarsen_sz == 4));
    }

    #[test]
    fn tiles_cover_groups() {
        let all = enumerate_fine_grained(64);
        assert!(!all.is_empty());
        assert!(all.iter().all(|c| c.tile_sz >= c.group_sz && c.tile_sz.is_power_of_two()));
        let mut sorted = all.clone();
        sorted.sort();
        assert_eq!(sorted, all);
    }
}
