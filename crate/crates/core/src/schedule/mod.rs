//! Schedule commands over [`CinStmt`] and the lowerability check.

mod validate;

pub use validate::{recoverable_vars, validate_schedule, validate_with_params};

use std::collections::BTreeSet;

use thiserror::Error;

use crate::cin::{
    Access, AssignOp, BoundType, CinStmt, Expr, IndexVar, LValue, ParallelAnnotation, ParallelUnit, ProvenanceGraph,
    ReductionStrategy, Relation, SizeExpr,
};

/// Tensors stored in compressed form. Position-space iteration is only
/// defined over these.
pub const SPARSE_TENSORS: &[&str] = &["A"];

#[derive(Clone, Debug, PartialEq)]
pub enum ScheduleCmd {
    Fuse {
        outer: IndexVar,
        inner: IndexVar,
        fused: IndexVar,
    },
    Pos {
        var: IndexVar,
        pos_var: IndexVar,
        access: Access,
    },
    Split {
        var: IndexVar,
        outer: IndexVar,
        inner: IndexVar,
        factor: SizeExpr,
    },
    Bound {
        var: IndexVar,
        bounded: IndexVar,
        extent: SizeExpr,
    },
    Parallelize {
        var: IndexVar,
        annotation: ParallelAnnotation,
    },
    /// Moves `expr` into scalar workspace `workspace`, computed by a
    /// producer that runs the listed loops; the consumer reduces the
    /// workspace into the original left-hand side.
    Precompute {
        expr: Expr,
        loops: Vec<IndexVar>,
        workspace: String,
    },
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ScheduleError {
    #[error("unknown index variable '{0}'")]
    UnknownVar(String),
    #[error("variable '{0}' already exists")]
    DuplicateVar(String),
    #[error("foralls over '{outer}' and '{inner}' are not directly nested")]
    NotAdjacent { outer: String, inner: String },
    #[error("pos requires a compressed access, '{0}' is dense")]
    DenseAccess(String),
    #[error("access {0} does not occur in the statement")]
    MissingAccess(String),
    #[error("'{var}' does not iterate a coordinate of {access}")]
    UnrelatedAccess { var: String, access: String },
    #[error("hardware unit {0:?} is already bound")]
    DuplicateUnit(ParallelUnit),
    #[error("GPUGroup on '{0}' requires a reduction variable")]
    NotReduction(String),
    #[error("size '{0}' must be a positive integer")]
    InvalidSize(String),
    #[error("expression {0} is not the right-hand side of any assignment")]
    ExprNotFound(String),
    #[error("cannot precompute over '{0}': {1}")]
    BadPrecompute(String, String),
}

type Result<T> = std::result::Result<T, ScheduleError>;

/// Applies one schedule command, returning the rewritten statement.
pub fn apply(cin: &CinStmt, cmd: &ScheduleCmd) -> Result<CinStmt> {
    let (body, mut relations) = match cin {
        CinStmt::SuchThat { body, relations } => ((**body).clone(), relations.clone()),
        s => (s.clone(), Vec::new()),
    };
    let defined = cin.defined_vars();
    let fresh = |v: &IndexVar| {
        if defined.contains(v.name()) {
            Err(ScheduleError::DuplicateVar(v.0.clone()))
        } else {
            Ok(())
        }
    };
    let body = match cmd {
        ScheduleCmd::Fuse { outer, inner, fused } => {
            require_forall(&body, outer)?;
            require_forall(&body, inner)?;
            fresh(fused)?;
            let mut found = false;
            let body = map_forall(body, outer, &mut |var, inner_body, annotation| match inner_body {
                CinStmt::Forall { var: v2, body: b2, annotation: a2 } if &v2 == inner => {
                    found = true;
                    CinStmt::Forall { var: fused.clone(), body: b2, annotation: annotation.or(a2) }
                }
                other => CinStmt::Forall { var, body: Box::new(other), annotation },
            });
            if !found {
                return Err(ScheduleError::NotAdjacent { outer: outer.0.clone(), inner: inner.0.clone() });
            }
            relations.push(Relation::Fuse { outer: outer.clone(), inner: inner.clone(), fused: fused.clone() });
            body
        }
        ScheduleCmd::Pos { var, pos_var, access } => {
            require_forall(&body, var)?;
            fresh(pos_var)?;
            if !SPARSE_TENSORS.contains(&access.tensor.as_str()) {
                return Err(ScheduleError::DenseAccess(access.tensor.clone()));
            }
            if !body.accesses().contains(&access) {
                return Err(ScheduleError::MissingAccess(access.to_string()));
            }
            let roots = ProvenanceGraph::new(&relations).roots(var);
            let compressed = access.indices.last().map(|v| v.0.clone()).unwrap_or_default();
            if !roots.contains(&compressed) {
                return Err(ScheduleError::UnrelatedAccess { var: var.0.clone(), access: access.to_string() });
            }
            relations.push(Relation::Pos { var: var.clone(), pos_var: pos_var.clone(), access: access.clone() });
            rename_forall(body, var, pos_var)
        }
        ScheduleCmd::Split { var, outer, inner, factor } => {
            require_forall(&body, var)?;
            fresh(outer)?;
            fresh(inner)?;
            check_size(factor)?;
            relations.push(Relation::Split {
                parent: var.clone(),
                outer: outer.clone(),
                inner: inner.clone(),
                factor: factor.clone(),
            });
            map_forall(body, var, &mut |_, b, annotation| CinStmt::Forall {
                var: outer.clone(),
                body: Box::new(CinStmt::Forall { var: inner.clone(), body: Box::new(b), annotation: None }),
                annotation,
            })
        }
        ScheduleCmd::Bound { var, bounded, extent } => {
            require_forall(&body, var)?;
            fresh(bounded)?;
            check_size(extent)?;
            relations.push(Relation::Bound {
                parent: var.clone(),
                bounded: bounded.clone(),
                extent: extent.clone(),
                kind: BoundType::MaxExact,
            });
            rename_forall(body, var, bounded)
        }
        ScheduleCmd::Parallelize { var, annotation } => {
            if cin.annotations().iter().any(|(_, a)| a.unit == annotation.unit) {
                return Err(ScheduleError::DuplicateUnit(annotation.unit));
            }
            if annotation.unit == ParallelUnit::GPUGroup {
                if !defined.contains(var.name()) {
                    return Err(ScheduleError::UnknownVar(var.0.clone()));
                }
                let strategy = annotation.group.as_ref().map(|g| g.strategy);
                check_reduction(cin, &relations, var, strategy)?;
                if let Some(g) = &annotation.group {
                    check_size(&g.size)?;
                }
                relations.push(Relation::Parallelize { var: var.clone(), annotation: annotation.clone() });
                body
            } else {
                require_forall(&body, var)?;
                let annotated = map_forall(body, var, &mut |v, b, _| CinStmt::Forall {
                    var: v,
                    body: Box::new(b),
                    annotation: Some(annotation.clone()),
                });
                let graph = ProvenanceGraph::new(&relations);
                hoist(annotated, var, &graph)
            }
        }
        ScheduleCmd::Precompute { expr, loops, workspace } => precompute(body, &relations, expr, loops, workspace)?,
    };
    Ok(if relations.is_empty() { body } else { CinStmt::SuchThat { body: Box::new(body), relations } })
}

/// Applies commands left to right.
pub fn apply_all(cin: &CinStmt, cmds: &[ScheduleCmd]) -> Result<CinStmt> {
    cmds.iter().try_fold(cin.clone(), |s, c| apply(&s, c))
}

/// Root variables that do not index the output: the reduction variables.
pub fn reduction_roots(cin: &CinStmt) -> BTreeSet<String> {
    let outputs = cin.output_vars();
    let mut roots = BTreeSet::new();
    for a in cin.accesses() {
        for v in &a.indices {
            roots.insert(v.0.clone());
        }
    }
    let graph = ProvenanceGraph::new(cin.relations());
    let all: BTreeSet<String> = roots.iter().flat_map(|r| graph.roots(&IndexVar::new(r.clone()))).collect();
    all.into_iter().filter(|r| !outputs.contains(r)).collect()
}

fn check_reduction(
    cin: &CinStmt,
    relations: &[Relation],
    var: &IndexVar,
    strategy: Option<ReductionStrategy>,
) -> Result<()> {
    let roots = ProvenanceGraph::new(relations).roots(var);
    let reductions = reduction_roots(cin);
    let ok = match strategy {
        Some(ReductionStrategy::Segment) => roots.iter().any(|r| reductions.contains(r)),
        _ => !roots.is_empty() && roots.iter().all(|r| reductions.contains(r)),
    };
    if ok {
        Ok(())
    } else {
        Err(ScheduleError::NotReduction(var.0.clone()))
    }
}

fn check_size(e: &SizeExpr) -> Result<()> {
    if e.is_literal() {
        match e.eval_literal() {
            Ok(v) if v >= 1 => {}
            _ => return Err(ScheduleError::InvalidSize(e.to_string())),
        }
    }
    Ok(())
}

fn require_forall(body: &CinStmt, var: &IndexVar) -> Result<()> {
    if body.foralls().iter().any(|(v, _)| *v == var) {
        Ok(())
    } else {
        Err(ScheduleError::UnknownVar(var.0.clone()))
    }
}

/// Rebuilds the forall over `target` with `f(var, body, annotation)`.
fn map_forall(
    s: CinStmt,
    target: &IndexVar,
    f: &mut dyn FnMut(IndexVar, CinStmt, Option<ParallelAnnotation>) -> CinStmt,
) -> CinStmt {
    match s {
        CinStmt::Forall { var, body, annotation } if &var == target => f(var, *body, annotation),
        CinStmt::Forall { var, body, annotation } => {
            CinStmt::Forall { var, body: Box::new(map_forall(*body, target, f)), annotation }
        }
        CinStmt::Where { consumer, producer } => CinStmt::Where {
            consumer: Box::new(map_forall(*consumer, target, f)),
            producer: Box::new(map_forall(*producer, target, f)),
        },
        CinStmt::SuchThat { body, relations } => {
            CinStmt::SuchThat { body: Box::new(map_forall(*body, target, f)), relations }
        }
        a @ CinStmt::Assign { .. } => a,
    }
}

fn rename_forall(s: CinStmt, from: &IndexVar, to: &IndexVar) -> CinStmt {
    map_forall(s, from, &mut |_, b, annotation| CinStmt::Forall { var: to.clone(), body: Box::new(b), annotation })
}

/// Moves a newly bound loop outward past unbound loops that tile the same
/// root dimension, so hardware loops sit above serial tiles.
fn hoist(s: CinStmt, target: &IndexVar, graph: &ProvenanceGraph<'_>) -> CinStmt {
    match s {
        CinStmt::Forall { var, body, annotation } => {
            let body = hoist(*body, target, graph);
            match body {
                CinStmt::Forall { var: inner, body: inner_body, annotation: inner_ann }
                    if &inner == target && annotation.is_none() && graph.roots(&inner) == graph.roots(&var) =>
                {
                    CinStmt::Forall {
                        var: inner,
                        body: Box::new(CinStmt::Forall { var, body: inner_body, annotation: None }),
                        annotation: inner_ann,
                    }
                }
                body => CinStmt::Forall { var, body: Box::new(body), annotation },
            }
        }
        CinStmt::Where { consumer, producer } => CinStmt::Where {
            consumer: Box::new(hoist(*consumer, target, graph)),
            producer: Box::new(hoist(*producer, target, graph)),
        },
        other => other,
    }
}

fn precompute(
    body: CinStmt,
    relations: &[Relation],
    expr: &Expr,
    loops: &[IndexVar],
    workspace: &str,
) -> Result<CinStmt> {
    if !body.assignments().iter().any(|(_, _, rhs)| *rhs == expr) {
        return Err(ScheduleError::ExprNotFound(expr.to_string()));
    }
    if body.defined_vars().contains(workspace)
        || body
            .assignments()
            .iter()
            .any(|(l, _, r)| matches!(l, LValue::Workspace(w) if w == workspace) || r.workspaces().contains(&workspace))
    {
        return Err(ScheduleError::DuplicateVar(workspace.to_string()));
    }
    let graph = ProvenanceGraph::new(relations);
    let outputs = body.output_vars();
    for l in loops {
        require_forall(&body, l)?;
        if graph.roots(l).iter().all(|r| outputs.contains(r)) {
            return Err(ScheduleError::BadPrecompute(l.0.clone(), "not a reduction loop".into()));
        }
    }
    let mut err = None;
    let out = sink(body, loops, expr, workspace, &mut Vec::new(), &mut err);
    match err {
        Some(e) => Err(e),
        None => Ok(out),
    }
}

/// Walks the perfect nest down to the assignment computing `expr`,
/// dropping the listed loops on the way and re-creating them inside the
/// producer.
fn sink(
    s: CinStmt,
    loops: &[IndexVar],
    expr: &Expr,
    workspace: &str,
    removed: &mut Vec<IndexVar>,
    err: &mut Option<ScheduleError>,
) -> CinStmt {
    match s {
        CinStmt::Forall { var, body, annotation } if loops.contains(&var) => {
            if annotation.is_some() {
                *err = Some(ScheduleError::BadPrecompute(var.0.clone(), "loop is bound to hardware".into()));
            }
            removed.push(var);
            sink(*body, loops, expr, workspace, removed, err)
        }
        CinStmt::Forall { var, body, annotation } => {
            CinStmt::Forall { var, body: Box::new(sink(*body, loops, expr, workspace, removed, err)), annotation }
        }
        CinStmt::Assign { lhs, op, rhs } if rhs == *expr => {
            if removed.len() != loops.len() {
                *err = Some(ScheduleError::BadPrecompute(
                    loops.iter().map(|l| l.0.as_str()).collect::<Vec<_>>().join(","),
                    "loops must enclose the assignment".into(),
                ));
            }
            let producer_op = if removed.is_empty() { AssignOp::Set } else { AssignOp::Add };
            let mut producer = CinStmt::Assign { lhs: LValue::Workspace(workspace.into()), op: producer_op, rhs };
            for v in removed.drain(..).rev() {
                producer = CinStmt::Forall { var: v, body: Box::new(producer), annotation: None };
            }
            CinStmt::Where {
                consumer: Box::new(CinStmt::Assign { lhs, op, rhs: Expr::Workspace(workspace.into()) }),
                producer: Box::new(producer),
            }
        }
        other => {
            if !removed.is_empty() {
                *err = Some(ScheduleError::BadPrecompute(
                    removed[0].0.clone(),
                    "loops must form a perfect nest over the assignment".into(),
                ));
            }
            other
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cin::{parse_cin, OutputRace};

    fn v(s: &str) -> IndexVar {
        IndexVar::new(s)
    }

    #[test]
    fn unit_split_adds_inner_loop() {
        let s = apply(
            &CinStmt::spmm(),
            &ScheduleCmd::Split { var: v("k"), outer: v("ko"), inner: v("ki"), factor: 1.into() },
        )
        .unwrap();
        let vars: Vec<_> = s.foralls().iter().map(|(v, _)| v.0.clone()).collect();
        assert_eq!(vars, ["i", "j", "ko", "ki"]);
        let back = parse_cin(&s.to_string()).unwrap();
        assert_eq!(back, s);
    }

    #[test]
    fn group_requires_reduction_variable() {
        let ann = ParallelAnnotation::group(ReductionStrategy::Parallel, 4);
        let ok = apply(&CinStmt::spmm(), &ScheduleCmd::Parallelize { var: v("j"), annotation: ann.clone() });
        assert!(ok.is_ok());
        let bad = apply(&CinStmt::spmm(), &ScheduleCmd::Parallelize { var: v("i"), annotation: ann });
        assert_eq!(bad.unwrap_err(), ScheduleError::NotReduction("i".into()));
    }

    #[test]
    fn rejects_bad_commands() {
        let spmm = CinStmt::spmm();
        let fuse_ik = ScheduleCmd::Fuse { outer: v("i"), inner: v("k"), fused: v("f") };
        assert!(matches!(apply(&spmm, &fuse_ik), Err(ScheduleError::NotAdjacent { .. })));
        let pos_b = ScheduleCmd::Pos { var: v("j"), pos_var: v("jp"), access: Access::new("B", &["j", "k"]) };
        assert!(matches!(apply(&spmm, &pos_b), Err(ScheduleError::DenseAccess(_))));
        let unknown = ScheduleCmd::Split { var: v("q"), outer: v("a"), inner: v("b"), factor: 2.into() };
        assert!(matches!(apply(&spmm, &unknown), Err(ScheduleError::UnknownVar(_))));
        let zero = ScheduleCmd::Split { var: v("k"), outer: v("a"), inner: v("b"), factor: 0.into() };
        assert!(matches!(apply(&spmm, &zero), Err(ScheduleError::InvalidSize(_))));
        let bind = |var: &str| ScheduleCmd::Parallelize {
            var: v(var),
            annotation: ParallelAnnotation::hardware(ParallelUnit::GPUBlock, OutputRace::NoRaces),
        };
        let once = apply(&spmm, &bind("i")).unwrap();
        assert_eq!(apply(&once, &bind("k")).unwrap_err(), ScheduleError::DuplicateUnit(ParallelUnit::GPUBlock));
    }

    #[test]
    fn fuse_then_pos_gives_one_loop() {
        let s = apply_all(
            &CinStmt::spmm(),
            &[
                ScheduleCmd::Fuse { outer: v("i"), inner: v("j"), fused: v("f") },
                ScheduleCmd::Pos { var: v("f"), pos_var: v("fpos"), access: Access::new("A", &["i", "j"]) },
            ],
        )
        .unwrap();
        let vars: Vec<_> = s.foralls().iter().map(|(v, _)| v.0.clone()).collect();
        assert_eq!(vars, ["fpos", "k"]);
    }

    #[test]
    fn precompute_without_loops_sets_workspace() {
        let expr = CinStmt::spmm().assignments()[0].2.clone();
        let s =
            apply(&CinStmt::spmm(), &ScheduleCmd::Precompute { expr, loops: vec![], workspace: "tmp".into() }).unwrap();
        assert_eq!(s.to_string(), "forall(i,forall(j,forall(k,where(C(i,k)+=tmp,tmp=A(i,j)*B(j,k)))))");
        assert!(s.check().is_empty());
    }
}
