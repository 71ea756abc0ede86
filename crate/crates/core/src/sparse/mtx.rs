use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use super::{CsrMatrix, SparseError};

#[derive(Clone, Copy, PartialEq)]
enum Field {
    Real,
    Integer,
    Pattern,
}

pub fn load_matrix_market(path: impl AsRef<Path>) -> Result<CsrMatrix, SparseError> {
    let file = File::open(path)?;
    parse_matrix_market(BufReader::new(file))
}

/// Parses a coordinate Matrix Market stream. Indices are 1-based on disk.
/// Symmetric files are expanded to full storage and repeated coordinates
/// are summed.
pub fn parse_matrix_market(reader: impl BufRead) -> Result<CsrMatrix, SparseError> {
    let err = |line: usize, msg: &str| SparseError::Parse { line, msg: msg.to_string() };

    let mut lines = reader.lines().enumerate().map(|(n, l)| (n + 1, l));
    let (hline, header) = match lines.next() {
        Some((n, l)) => (n, l?),
        None => return Err(err(1, "empty file")),
    };
    let tokens: Vec<String> = header.split_whitespace().map(str::to_ascii_lowercase).collect();
    if tokens.len() != 5 || tokens[0] != "%%matrixmarket" {
        return Err(err(hline, "expected '%%MatrixMarket matrix coordinate <field> <symmetry>'"));
    }
    if tokens[1] != "matrix" || tokens[2] != "coordinate" {
        return Err(err(hline, "only 'matrix coordinate' files are supported"));
    }
    let field = match tokens[3].as_str() {
        "real" | "double" => Field::Real,
        "integer" => Field::Integer,
        "pattern" => Field::Pattern,
        other => return Err(err(hline, &format!("unsupported field '{other}'"))),
    };
    let symmetric = match tokens[4].as_str() {
        "general" => false,
        "symmetric" => true,
        other => return Err(err(hline, &format!("unsupported symmetry '{other}'"))),
    };

    let mut size: Option<(usize, usize, usize)> = None;
    let mut triplets = Vec::new();
    for (n, line) in lines {
        let line = line?;
        let t = line.trim();
        if t.is_empty() || t.starts_with('%') {
            continue;
        }
        let parts: Vec<&str> = t.split_whitespace().collect();
        let Some((rows, cols, nnz)) = size else {
            if parts.len() != 3 {
                return Err(err(n, "size line must be 'rows cols nnz'"));
            }
            let p = |s: &str| s.parse::<usize>().map_err(|_| err(n, "non-integer size"));
            size = Some((p(parts[0])?, p(parts[1])?, p(parts[2])?));
            triplets.reserve(size.unwrap().2);
            continue;
        };
        let want = if field == Field::Pattern { 2 } else { 3 };
        if parts.len() != want {
            return Err(err(n, &format!("expected {want} fields, found {}", parts.len())));
        }
        let idx = |s: &str| s.parse::<usize>().map_err(|_| err(n, "non-integer index"));
        let (r, c) = (idx(parts[0])?, idx(parts[1])?);
        if r == 0 || c == 0 || r > rows || c > cols {
            return Err(err(n, &format!("coordinate ({r}, {c}) outside {rows}x{cols}")));
        }
        let v = match field {
            Field::Pattern => 1.0,
            Field::Integer => parts[2].parse::<i64>().map_err(|_| err(n, "non-integer value"))? as f64,
            Field::Real => parts[2].parse::<f64>().map_err(|_| err(n, "non-numeric value"))?,
        };
        triplets.push((r - 1, c - 1, v));
        if symmetric && r != c {
            triplets.push((c - 1, r - 1, v));
        }
        if triplets.len() > 2 * nnz {
            return Err(err(n, "more entries than declared"));
        }
    }
    let (rows, cols, _) = size.ok_or_else(|| err(hline, "missing size line"))?;
    CsrMatrix::from_triplets(rows, cols, &triplets)
}
