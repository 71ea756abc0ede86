//! The atomic-parallelism design space: points `{<data, col>, r}`, the
//! three legality rules, enumeration and the mapping onto algorithm
//! templates.

mod fine;
mod template;

pub use fine::{coarsen_size, enumerate_fine_grained, FineGrainedConfig, BLOCK_SIZES, SCALE_EXPONENTS};
pub use template::{algorithm_template, family, Family, TemplateError};

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cin::Params;

/// Valid reduction parallelism values.
pub const R_VALUES: [u32; 6] = [1, 2, 4, 8, 16, 32];
/// Enumeration cap on the data-amount parameter.
pub const MAX_G: u32 = 512;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DataKind {
    Nnz,
    Row,
}

/// How much of one data category a thread owns.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Amount {
    /// `1/k` of a datum, `k >= 2`.
    Reciprocal(u32),
    One,
    /// `k` data, `k >= 2`.
    Multiple(u32),
}

impl Amount {
    pub fn reciprocal(k: u32) -> Amount {
        if k == 1 {
            Amount::One
        } else {
            Amount::Reciprocal(k)
        }
    }

    pub fn multiple(k: u32) -> Amount {
        if k == 1 {
            Amount::One
        } else {
            Amount::Multiple(k)
        }
    }

    /// The tunable parameter, 1 for `One`.
    pub fn param(self) -> u32 {
        match self {
            Amount::Reciprocal(k) | Amount::Multiple(k) => k,
            Amount::One => 1,
        }
    }

    pub fn is_reciprocal(self) -> bool {
        matches!(self, Amount::Reciprocal(_))
    }
}

impl fmt::Display for Amount {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Amount::Reciprocal(k) => write!(f, "1/{k}"),
            Amount::One => f.write_str("1"),
            Amount::Multiple(k) => write!(f, "{k}"),
        }
    }
}

impl FromStr for Amount {
    type Err = SpaceError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        let bad = || SpaceError::Parse(format!("bad amount '{s}'"));
        if let Some(den) = s.strip_prefix("1/") {
            let k: u32 = den.trim().parse().map_err(|_| bad())?;
            if k == 0 {
                return Err(bad());
            }
            return Ok(Amount::reciprocal(k));
        }
        let k: u32 = s.parse().map_err(|_| bad())?;
        if k == 0 {
            return Err(bad());
        }
        Ok(Amount::multiple(k))
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SpaceError {
    #[error("{0}")]
    Parse(String),
    #[error("reduction parallelism {0} not in {{1,2,4,8,16,32}}")]
    BadR(u32),
    #[error("amount parameter must be at least 2, got {0}")]
    BadParam(u32),
}

/// `{<data kind amount, col amount>, r}`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct AtomicParallelismPoint {
    pub kind: DataKind,
    pub data: Amount,
    pub col: Amount,
    pub r: u32,
}

impl AtomicParallelismPoint {
    pub fn new(kind: DataKind, data: Amount, col: Amount, r: u32) -> Result<Self, SpaceError> {
        let p = AtomicParallelismPoint { kind, data, col, r };
        p.check()?;
        Ok(p)
    }

    /// Checks the type invariants (not the legality rules).
    pub fn check(&self) -> Result<(), SpaceError> {
        if !R_VALUES.contains(&self.r) {
            return Err(SpaceError::BadR(self.r));
        }
        for a in [self.data, self.col] {
            if let Amount::Reciprocal(k) | Amount::Multiple(k) = a {
                if k < 2 {
                    return Err(SpaceError::BadParam(k));
                }
            }
        }
        Ok(())
    }

    /// Command-line form, e.g. `row:1/32,col:4,r:32`.
    pub fn to_spec(&self) -> String {
        let kind = match self.kind {
            DataKind::Nnz => "nnz",
            DataKind::Row => "row",
        };
        format!("{kind}:{},col:{},r:{}", self.data, self.col, self.r)
    }
}

impl fmt::Display for AtomicParallelismPoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let kind = match self.kind {
            DataKind::Nnz => "nnz",
            DataKind::Row => "row",
        };
        write!(f, "{{<{} {kind}, {} col>, {}}}", self.data, self.col, self.r)
    }
}

impl FromStr for AtomicParallelismPoint {
    type Err = SpaceError;

    /// Parses `kind:amount,col:amount,r:N`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (mut kind, mut col, mut r) = (None, None, None);
        for part in s.split(',') {
            let (key, val) =
                part.split_once(':').ok_or_else(|| SpaceError::Parse(format!("expected key:value, got '{part}'")))?;
            match key.trim() {
                "nnz" => kind = Some((DataKind::Nnz, val.parse::<Amount>()?)),
                "row" => kind = Some((DataKind::Row, val.parse::<Amount>()?)),
                "col" => col = Some(val.parse::<Amount>()?),
                "r" => r = Some(val.trim().parse::<u32>().map_err(|_| SpaceError::Parse(format!("bad r '{val}'")))?),
                other => return Err(SpaceError::Parse(format!("unknown key '{other}'"))),
            }
        }
        let (kind, data) = kind.ok_or_else(|| SpaceError::Parse("missing nnz: or row: amount".into()))?;
        let col = col.ok_or_else(|| SpaceError::Parse("missing col: amount".into()))?;
        let r = r.ok_or_else(|| SpaceError::Parse("missing r:".into()))?;
        AtomicParallelismPoint::new(kind, data, col, r)
    }
}

/// The legality rule a point breaks.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Rule {
    /// Non-zeros cannot be split between threads.
    ReciprocalNnz = 1,
    /// A row split over `g` threads needs `r >= g` to reduce it.
    GroupTooSmall = 2,
    /// A row cannot be split on both the sparse and dense axis.
    DoubleReciprocal = 3,
}

impl Rule {
    pub fn number(self) -> u8 {
        self as u8
    }
}

impl fmt::Display for Rule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Rule {}", self.number())
    }
}

/// First rule (in order 1, 2, 3) the point violates.
pub fn rule_violated(p: &AtomicParallelismPoint) -> Option<Rule> {
    match (p.kind, p.data, p.col) {
        (DataKind::Nnz, d, c) if d.is_reciprocal() || c.is_reciprocal() => Some(Rule::ReciprocalNnz),
        (DataKind::Row, Amount::Reciprocal(g), _) if p.r < g => Some(Rule::GroupTooSmall),
        (DataKind::Row, Amount::Reciprocal(_), Amount::Reciprocal(_)) => Some(Rule::DoubleReciprocal),
        _ => None,
    }
}

pub fn is_legal(p: &AtomicParallelismPoint) -> bool {
    rule_violated(p).is_none()
}

fn amounts(values: &[u32], cap: u32) -> Vec<Amount> {
    let mut out = vec![Amount::One];
    for &v in values.iter().filter(|&&v| v >= 1 && v <= cap) {
        out.push(Amount::reciprocal(v));
        out.push(Amount::multiple(v));
    }
    out.sort();
    out.dedup();
    out
}

/// Every point over the given parameter sets paired with the rule it
/// breaks, sorted and without duplicates. `g` is capped at [`MAX_G`] and
/// `r` values outside [`R_VALUES`] are dropped.
pub fn enumerate_with_rules(g: &[u32], c: &[u32], r: &[u32]) -> Vec<(AtomicParallelismPoint, Option<Rule>)> {
    let rs: Vec<u32> = R_VALUES.iter().copied().filter(|v| r.contains(v)).collect();
    if rs.is_empty() {
        return Vec::new();
    }
    let (datas, cols) = (amounts(g, MAX_G), amounts(c, u32::MAX));
    let mut out = Vec::new();
    for kind in [DataKind::Nnz, DataKind::Row] {
        for &data in &datas {
            for &col in &cols {
                for &r in &rs {
                    let p = AtomicParallelismPoint { kind, data, col, r };
                    out.push((p, rule_violated(&p)));
                }
            }
        }
    }
    out.sort_by_key(|(p, _)| *p);
    out.dedup_by_key(|(p, _)| *p);
    out
}

/// All legal points over the cross product of the parameter sets.
pub fn enumerate_space(g: &[u32], c: &[u32], r: &[u32]) -> Vec<AtomicParallelismPoint> {
    enumerate_with_rules(g, c, r).into_iter().filter(|(_, rule)| rule.is_none()).map(|(p, _)| p).collect()
}

/// The four algorithms of DA-SpMM expressed as points.
pub fn da_spmm_points(c: u32) -> [(&'static str, AtomicParallelismPoint); 4] {
    let col = Amount::multiple(c);
    let pt = |kind, data, r| AtomicParallelismPoint { kind, data, col, r };
    [
        ("EB+PR", pt(DataKind::Nnz, Amount::One, 32)),
        ("RB+PR", pt(DataKind::Row, Amount::Reciprocal(32), 32)),
        ("EB+SR", pt(DataKind::Nnz, Amount::Multiple(32), 1)),
        ("RB+SR", pt(DataKind::Row, Amount::One, 1)),
    ]
}

/// A point together with the problem parameters needed to instantiate it.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct KernelConfig {
    pub point: AtomicParallelismPoint,
    /// dense column count
    pub n: u32,
    /// threads per block
    pub p: u32,
}

impl KernelConfig {
    pub fn new(point: AtomicParallelismPoint, n: u32) -> Self {
        KernelConfig { point, n, p: 256 }
    }

    pub fn params(&self) -> Params {
        Params {
            p: self.p as i64,
            g: self.point.data.param() as i64,
            c: self.point.col.param() as i64,
            n: self.n as i64,
            r: self.point.r as i64,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pt(s: &str) -> AtomicParallelismPoint {
        s.parse().unwrap()
    }

    #[test]
    fn rule_examples() {
        assert_eq!(rule_violated(&pt("nnz:1/2,col:1,r:32")), Some(Rule::ReciprocalNnz));
        assert!(is_legal(&pt("row:1/32,col:4,r:32")));
        assert_eq!(rule_violated(&pt("row:1/8,col:4,r:4")), Some(Rule::GroupTooSmall));
        assert_eq!(rule_violated(&pt("row:1/4,col:1/2,r:8")), Some(Rule::DoubleReciprocal));
        assert_eq!(rule_violated(&pt("nnz:4,col:1/2,r:1")), Some(Rule::ReciprocalNnz));
    }

    #[test]
    fn point_text_forms() {
        let p = pt("row:1/32,col:4,r:32");
        assert_eq!(p.to_string(), "{<1/32 row, 4 col>, 32}");
        assert_eq!(pt(&p.to_spec()), p);
        assert_eq!(pt("nnz:1,col:1,r:1").data, Amount::One);
        assert!("nnz:1,col:1,r:3".parse::<AtomicParallelismPoint>().is_err());
        assert!("nnz:1/0,col:1,r:1".parse::<AtomicParallelismPoint>().is_err());
        assert!("col:1,r:1".parse::<AtomicParallelismPoint>().is_err());
    }

    #[test]
    fn da_spmm_points_are_legal_and_distinct() {
        let pts = da_spmm_points(4);
        for (name, p) in &pts {
            assert!(is_legal(p), "{name}");
        }
        for a in 0..4 {
            for b in a + 1..4 {
                assert_ne!(pts[a].1, pts[b].1);
            }
        }
    }

    #[test]
    fn empty_r_gives_empty_space() {
        assert!(enumerate_space(&[2, 4], &[1], &[]).is_empty());
    }

    #[test]
    fn serde_round_trip() {
        let p = pt("row:1/8,col:2,r:8");
        let json = serde_json::to_string(&p).unwrap();
        assert_eq!(serde_json::from_str::<AtomicParallelismPoint>(&json).unwrap(), p);
    }
}
