use serde::Serialize;
use thiserror::Error;

use super::{rule_violated, Amount, AtomicParallelismPoint, DataKind, KernelConfig, Rule};
use crate::cin::{parse_cin, CinStmt, Relation};
use crate::schedule::validate_with_params;

/// Template families. Each is a fixed schedule shape with symbolic sizes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
pub enum Family {
    /// `{<g nnz, c col>, 1}`: each thread walks `g` non-zeros serially.
    NnzSerial,
    /// `{<g row, c col>, 1}`: each thread walks `g` rows serially.
    RowSerial,
    /// `{<1/g row, c col>, r}`: `g` threads share a row, parallel reduction.
    RowGroup,
    /// `{<1 nnz, c col>, r}`: one non-zero per thread, segment reduction
    /// (or plain atomics when `r = 1`).
    NnzSegment,
}

impl Family {
    /// Symbolic CIN text over the parameters `p, g, c, N, r`.
    pub fn text(self) -> &'static str {
        match self {
            Family::NnzSerial => NNZ_SERIAL,
            Family::RowSerial => ROW_SERIAL,
            Family::RowGroup => ROW_GROUP,
            Family::NnzSegment => NNZ_SEGMENT,
        }
    }
}

const NNZ_SERIAL: &str = "suchthat(forall(block,forall(warp,forall(thread,forall(dense_val,\
where(C(i,k)+=tnnzC,forall(nnz,tnnzC+=A(i,j)*B(j,k)))),GPUThread,Atomics),GPUWarp,NoRaces),\
GPUBlock,NoRaces),fuse(i,j,f) and pos(f,fpos,A(i,j)) and split(fpos,block,fpos1,p*g/(N/c)) and \
split(fpos1,warp,nnz,g) and split(k,ko,thread,c) and bound(ko,dense_val,N/c,MaxExact))";

const ROW_SERIAL: &str = "suchthat(forall(block,forall(warp,forall(row,forall(thread,forall(col,\
where(C(i,k)+=tjC,forall(j,tjC+=A(i,j)*B(j,k)))),GPUThread,NoRaces)),GPUWarp,NoRaces),\
GPUBlock,NoRaces),split(i,block,io,p*g/(N/c)) and split(io,warp,row,g) and split(k,ko,col,c) and \
bound(ko,thread,N/c,MaxExact))";

const ROW_GROUP: &str = "suchthat(forall(ko,forall(warp,forall(kii,where(C(i,k)+=tjpos1C,\
forall(jpos1,forall(jpos0,tjpos1C+=A(i,j)*B(j,k)),GPUThread,ParallelReduction))),GPUWarp,Atomics),\
GPUBlock,NoRaces),fuse(i,k,io) and split(io,ko,ki,c*p/g) and split(ki,warp,kii,c) and \
pos(j,jpos,A(i,j)) and split(jpos,jpos0,jpos1,g) and parallelize(jpos1,GPUGroup,r,Atomics))";

const NNZ_SEGMENT: &str = "suchthat(forall(block,forall(warp,forall(ki,forall(fpos1,where(\
C(i,k)+=tmp,tmp=A(i,j)*B(j,k)),GPUThread,Atomics)),GPUWarp,NoRaces),GPUBlock,IgnoreRaces),\
fuse(i,j,f) and pos(f,fpos,A(i,j)) and split(fpos,block,fpos1,p/(N/c)) and split(k,ko,ki,c) and \
bound(ko,warp,N/c,MaxExact) and parallelize(jpos1,GPUGroup,r,Segment))";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TemplateError {
    #[error("illegal point ({0})")]
    Illegal(Rule),
    #[error("point {0} is legal but has no template")]
    NoTemplate(AtomicParallelismPoint),
    #[error("parameters do not divide evenly: {0}")]
    Divisibility(String),
}

/// The template family a point belongs to, if any.
pub fn family(p: &AtomicParallelismPoint) -> Option<Family> {
    if rule_violated(p).is_some() || p.col.is_reciprocal() {
        return None;
    }
    match (p.kind, p.data, p.r) {
        (DataKind::Nnz, Amount::Multiple(_), 1) => Some(Family::NnzSerial),
        (DataKind::Nnz, Amount::One, _) => Some(Family::NnzSegment),
        (DataKind::Row, Amount::One | Amount::Multiple(_), 1) => Some(Family::RowSerial),
        (DataKind::Row, Amount::Reciprocal(_), _) => Some(Family::RowGroup),
        _ => None,
    }
}

/// Instantiates the scheduled CIN for `point` with the sizes of `config`.
pub fn algorithm_template(point: &AtomicParallelismPoint, config: &KernelConfig) -> Result<CinStmt, TemplateError> {
    if let Some(rule) = rule_violated(point) {
        return Err(TemplateError::Illegal(rule));
    }
    let fam = family(point).ok_or(TemplateError::NoTemplate(*point))?;
    let c = point.col.param();
    if config.n == 0 || c > config.n || !config.n.is_multiple_of(c) {
        return Err(TemplateError::Divisibility(format!("c={c} must divide N={}", config.n)));
    }
    if config.p == 0 || !config.p.is_multiple_of(32) {
        return Err(TemplateError::Divisibility(format!("p={} must be a multiple of 32", config.p)));
    }
    let mut stmt = parse_cin(fam.text()).expect("template text parses");
    if fam == Family::NnzSegment && point.r == 1 {
        if let CinStmt::SuchThat { relations, .. } = &mut stmt {
            relations.retain(|r| !matches!(r, Relation::Parallelize { .. }));
        }
    }
    let params = KernelConfig { point: *point, ..*config }.params();
    let diags = validate_with_params(&stmt, &params);
    if !diags.is_empty() {
        return Err(TemplateError::Divisibility(diags.join("; ")));
    }
    Ok(stmt.substitute(&params))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cin::{normalize_text, ReductionStrategy};

    fn cfg(s: &str) -> (AtomicParallelismPoint, KernelConfig) {
        let p: AtomicParallelismPoint = s.parse().unwrap();
        (p, KernelConfig::new(p, 4))
    }

    #[test]
    fn nnz_serial_substitutes_sizes() {
        let (p, c) = cfg("nnz:32,col:1,r:1");
        let s = algorithm_template(&p, &c).unwrap();
        assert!(normalize_text(&s.to_string()).contains("split(fpos,block,fpos1,256*32/(4/1))"));
    }

    #[test]
    fn group_families_carry_strategy() {
        let (p, c) = cfg("row:1/8,col:2,r:8");
        let s = algorithm_template(&p, &c).unwrap();
        assert!(s.to_string().contains("parallelize(jpos1,GPUGroup,8,Atomics)"));
        let (p, c) = cfg("nnz:1,col:1,r:16");
        let s = algorithm_template(&p, &c).unwrap();
        let (_, a) = s.group_annotation().unwrap();
        assert_eq!(a.group.as_ref().unwrap().strategy, ReductionStrategy::Segment);
        let (p, c) = cfg("nnz:1,col:1,r:1");
        assert!(algorithm_template(&p, &c).unwrap().group_annotation().is_none());
    }

    #[test]
    fn errors() {
        let (p, c) = cfg("row:1/8,col:4,r:4");
        assert_eq!(algorithm_template(&p, &c), Err(TemplateError::Illegal(Rule::GroupTooSmall)));
        let (p, c) = cfg("row:4,col:1/2,r:2");
        assert!(matches!(algorithm_template(&p, &c), Err(TemplateError::NoTemplate(_))));
        let (p, c) = cfg("row:1,col:3,r:1");
        assert!(matches!(algorithm_template(&p, &c), Err(TemplateError::Divisibility(_))));
    }

    #[test]
    fn texts_match_their_families() {
        for fam in [Family::NnzSerial, Family::RowSerial, Family::RowGroup, Family::NnzSegment] {
            let s = parse_cin(fam.text()).unwrap();
            assert_eq!(normalize_text(&s.to_string()), normalize_text(fam.text()));
        }
    }
}
