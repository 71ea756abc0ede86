use std::path::{Path, PathBuf};

use anyhow::{Context, Result};

use segspmm::sparse::{load_matrix_market, random_csr, random_dense, CsrMatrix, DenseMatrix};

use crate::usage;

pub const DEFAULT_SEED: u64 = 42;
pub const SEED_ENV: &str = "SGAP_SEED";

/// Seed used when a flag leaves it out: `SGAP_SEED` if set, else 42.
pub fn default_seed() -> Result<u64> {
    match std::env::var(SEED_ENV) {
        Ok(v) => v.trim().parse().map_err(|_| usage(format!("{SEED_ENV} must be an unsigned integer, got '{v}'"))),
        Err(_) => Ok(DEFAULT_SEED),
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum MatrixSource {
    File(PathBuf),
    Random { rows: usize, cols: usize, density: f64, seed: u64 },
}

impl MatrixSource {
    pub fn from_flags(matrix: Option<&Path>, random: Option<&str>) -> Result<Option<MatrixSource>> {
        match (matrix, random) {
            (Some(p), _) => Ok(Some(MatrixSource::File(p.to_path_buf()))),
            (None, Some(spec)) => Ok(Some(parse_random(spec)?)),
            (None, None) => Ok(None),
        }
    }

    pub fn default_random() -> MatrixSource {
        MatrixSource::Random { rows: 64, cols: 64, density: 0.1, seed: default_seed().unwrap_or(DEFAULT_SEED) }
    }

    pub fn load(&self) -> Result<CsrMatrix> {
        match self {
            MatrixSource::File(p) => load_matrix_market(p).with_context(|| format!("reading {}", p.display())),
            MatrixSource::Random { rows, cols, density, seed } => Ok(random_csr(*rows, *cols, *density, *seed)),
        }
    }

    /// Dense right-hand side for this matrix, seeded from the matrix seed.
    pub fn dense_operand(&self, rows: usize, cols: usize) -> DenseMatrix {
        let seed = match self {
            MatrixSource::Random { seed, .. } => *seed,
            MatrixSource::File(_) => default_seed().unwrap_or(DEFAULT_SEED),
        };
        random_dense(rows, cols, seed.wrapping_add(1))
    }

    pub fn label(&self) -> String {
        match self {
            MatrixSource::File(p) => p.display().to_string(),
            MatrixSource::Random { rows, cols, density, seed } => format!("random:{rows}x{cols}:{density}:{seed}"),
        }
    }
}

/// Parses `RxC:density[:seed]`; `seed1` is accepted as `1`.
pub fn parse_random(spec: &str) -> Result<MatrixSource> {
    let bad = |why: &str| usage(format!("bad --random '{spec}': {why} (expected RxC:density[:seed])"));
    let parts: Vec<&str> = spec.split(':').collect();
    if !(2..=3).contains(&parts.len()) {
        return Err(bad("wrong number of fields"));
    }
    let (r, c) = parts[0].split_once(['x', 'X']).ok_or_else(|| bad("missing RxC"))?;
    let rows: usize = r.trim().parse().map_err(|_| bad("rows"))?;
    let cols: usize = c.trim().parse().map_err(|_| bad("cols"))?;
    let density: f64 = parts[1].trim().parse().map_err(|_| bad("density"))?;
    if !(0.0..=1.0).contains(&density) {
        return Err(bad("density must be in [0, 1]"));
    }
    let seed = match parts.get(2) {
        Some(s) => s.trim().trim_start_matches("seed").parse().map_err(|_| bad("seed"))?,
        None => default_seed()?,
    };
    Ok(MatrixSource::Random { rows, cols, density, seed })
}

/// Comma-separated positive integers; an empty string is an empty list.
pub fn parse_list(text: &str, flag: &str) -> Result<Vec<u32>> {
    text.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| match s.parse::<u32>() {
            Ok(v) if v > 0 => Ok(v),
            _ => Err(usage(format!("{flag}: '{s}' is not a positive integer"))),
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn random_specs() {
        assert_eq!(
            parse_random("64x32:0.1:seed7").unwrap(),
            MatrixSource::Random { rows: 64, cols: 32, density: 0.1, seed: 7 }
        );
        assert!(parse_random("64:0.1").is_err());
        assert!(parse_random("4x4:1.5:1").is_err());
    }

    #[test]
    fn lists() {
        assert_eq!(parse_list("1, 2,4", "--c").unwrap(), vec![1, 2, 4]);
        assert!(parse_list("", "--r").unwrap().is_empty());
        assert!(parse_list("0", "--g").is_err());
    }
}
