//! Concrete index notation: loop structure, scalar workspaces, hardware
//! bindings and the index-variable relations that schedules install.

mod parse;
mod print;
mod size;

pub use parse::parse_cin;
pub use print::normalize_text;
pub use size::{Param, Params, SizeError, SizeExpr, SizeOp};

use std::collections::{BTreeSet, HashMap, HashSet};
use std::fmt;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CinError {
    #[error("syntax error at {line}:{col}: {msg}")]
    Syntax { line: usize, col: usize, msg: String },
    #[error("unbound index variable '{0}'")]
    Unbound(String),
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct IndexVar(pub String);

impl IndexVar {
    pub fn new(name: impl Into<String>) -> Self {
        IndexVar(name.into())
    }

    pub fn name(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for IndexVar {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for IndexVar {
    fn from(s: &str) -> Self {
        IndexVar(s.to_string())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ParallelUnit {
    GPUBlock,
    GPUWarp,
    GPUThread,
    GPUGroup,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum OutputRace {
    NoRaces,
    IgnoreRaces,
    Atomics,
    ParallelReduction,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ReductionStrategy {
    Parallel,
    Segment,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct GroupAttrs {
    pub strategy: ReductionStrategy,
    pub size: SizeExpr,
}

/// Hardware binding of a loop. Group attributes are present exactly when
/// the unit is `GPUGroup`.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct ParallelAnnotation {
    pub unit: ParallelUnit,
    pub race: OutputRace,
    pub group: Option<GroupAttrs>,
}

impl ParallelAnnotation {
    /// Binding to a block, warp or thread index.
    pub fn hardware(unit: ParallelUnit, race: OutputRace) -> Self {
        assert!(unit != ParallelUnit::GPUGroup, "use ParallelAnnotation::group");
        ParallelAnnotation { unit, race, group: None }
    }

    pub fn group(strategy: ReductionStrategy, size: impl Into<SizeExpr>) -> Self {
        ParallelAnnotation {
            unit: ParallelUnit::GPUGroup,
            race: OutputRace::Atomics,
            group: Some(GroupAttrs { strategy, size: size.into() }),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum BoundType {
    MaxExact,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Access {
    pub tensor: String,
    pub indices: Vec<IndexVar>,
}

impl Access {
    pub fn new(tensor: &str, indices: &[&str]) -> Self {
        Access { tensor: tensor.to_string(), indices: indices.iter().map(|&s| s.into()).collect() }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum Expr {
    Access(Access),
    Workspace(String),
    Mul(Box<Expr>, Box<Expr>),
}

impl Expr {
    pub fn accesses(&self) -> Vec<&Access> {
        match self {
            Expr::Access(a) => vec![a],
            Expr::Workspace(_) => vec![],
            Expr::Mul(a, b) => {
                let mut v = a.accesses();
                v.extend(b.accesses());
                v
            }
        }
    }

    pub fn workspaces(&self) -> Vec<&str> {
        match self {
            Expr::Access(_) => vec![],
            Expr::Workspace(w) => vec![w.as_str()],
            Expr::Mul(a, b) => {
                let mut v = a.workspaces();
                v.extend(b.workspaces());
                v
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum LValue {
    Access(Access),
    Workspace(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum AssignOp {
    Set,
    Add,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum Relation {
    Fuse { outer: IndexVar, inner: IndexVar, fused: IndexVar },
    Pos { var: IndexVar, pos_var: IndexVar, access: Access },
    Split { parent: IndexVar, outer: IndexVar, inner: IndexVar, factor: SizeExpr },
    Bound { parent: IndexVar, bounded: IndexVar, extent: SizeExpr, kind: BoundType },
    Parallelize { var: IndexVar, annotation: ParallelAnnotation },
}

impl Relation {
    /// Variables this relation introduces.
    pub fn children(&self) -> Vec<&IndexVar> {
        match self {
            Relation::Fuse { fused, .. } => vec![fused],
            Relation::Pos { pos_var, .. } => vec![pos_var],
            Relation::Split { outer, inner, .. } => vec![outer, inner],
            Relation::Bound { bounded, .. } => vec![bounded],
            Relation::Parallelize { .. } => vec![],
        }
    }

    /// Variables this relation derives from.
    pub fn parents(&self) -> Vec<&IndexVar> {
        match self {
            Relation::Fuse { outer, inner, .. } => vec![outer, inner],
            Relation::Pos { var, .. } => vec![var],
            Relation::Split { parent, .. } | Relation::Bound { parent, .. } => vec![parent],
            Relation::Parallelize { .. } => vec![],
        }
    }

    pub fn mentions(&self) -> Vec<&IndexVar> {
        let mut v = self.parents();
        v.extend(self.children());
        if let Relation::Parallelize { var, .. } = self {
            v.push(var);
        }
        if let Relation::Pos { access, .. } = self {
            v.extend(access.indices.iter());
        }
        v
    }

    fn substitute(&self, params: &Params) -> Relation {
        let mut r = self.clone();
        match &mut r {
            Relation::Split { factor, .. } => *factor = factor.substitute(params),
            Relation::Bound { extent, .. } => *extent = extent.substitute(params),
            Relation::Parallelize { annotation, .. } => {
                if let Some(g) = &mut annotation.group {
                    g.size = g.size.substitute(params);
                }
            }
            _ => {}
        }
        r
    }
}

/// A concrete index notation statement.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum CinStmt {
    Forall { var: IndexVar, body: Box<CinStmt>, annotation: Option<ParallelAnnotation> },
    Where { consumer: Box<CinStmt>, producer: Box<CinStmt> },
    Assign { lhs: LValue, op: AssignOp, rhs: Expr },
    SuchThat { body: Box<CinStmt>, relations: Vec<Relation> },
}

/// How an index variable came to exist.
#[derive(Clone, Debug, PartialEq)]
pub enum Provenance {
    Root,
    SplitOuter { parent: IndexVar, factor: SizeExpr },
    SplitInner { parent: IndexVar, factor: SizeExpr },
    Fused { outer: IndexVar, inner: IndexVar },
    PosSpace { var: IndexVar, access: Access },
    Bounded { parent: IndexVar, extent: SizeExpr, kind: BoundType },
}

impl CinStmt {
    pub fn forall(var: &str, body: CinStmt) -> CinStmt {
        CinStmt::Forall { var: var.into(), body: Box::new(body), annotation: None }
    }

    /// `C(i,k) += A(i,j) * B(j,k)` nested as `forall(i, forall(j, forall(k, ..)))`.
    pub fn spmm() -> CinStmt {
        let assign = CinStmt::Assign {
            lhs: LValue::Access(Access::new("C", &["i", "k"])),
            op: AssignOp::Add,
            rhs: Expr::Mul(
                Box::new(Expr::Access(Access::new("A", &["i", "j"]))),
                Box::new(Expr::Access(Access::new("B", &["j", "k"]))),
            ),
        };
        CinStmt::forall("i", CinStmt::forall("j", CinStmt::forall("k", assign)))
    }

    pub fn relations(&self) -> &[Relation] {
        match self {
            CinStmt::SuchThat { relations, .. } => relations,
            _ => &[],
        }
    }

    /// The statement under an outermost `suchthat`, or `self`.
    pub fn body(&self) -> &CinStmt {
        match self {
            CinStmt::SuchThat { body, .. } => body,
            s => s,
        }
    }

    /// Every forall in pre-order with its annotation.
    pub fn foralls(&self) -> Vec<(&IndexVar, Option<&ParallelAnnotation>)> {
        let mut out = Vec::new();
        fn walk<'a>(s: &'a CinStmt, out: &mut Vec<(&'a IndexVar, Option<&'a ParallelAnnotation>)>) {
            match s {
                CinStmt::Forall { var, body, annotation } => {
                    out.push((var, annotation.as_ref()));
                    walk(body, out);
                }
                CinStmt::Where { consumer, producer } => {
                    walk(consumer, out);
                    walk(producer, out);
                }
                CinStmt::SuchThat { body, .. } => walk(body, out),
                CinStmt::Assign { .. } => {}
            }
        }
        walk(self, &mut out);
        out
    }

    pub fn assignments(&self) -> Vec<(&LValue, AssignOp, &Expr)> {
        let mut out = Vec::new();
        fn walk<'a>(s: &'a CinStmt, out: &mut Vec<(&'a LValue, AssignOp, &'a Expr)>) {
            match s {
                CinStmt::Forall { body, .. } | CinStmt::SuchThat { body, .. } => walk(body, out),
                CinStmt::Where { consumer, producer } => {
                    walk(consumer, out);
                    walk(producer, out);
                }
                CinStmt::Assign { lhs, op, rhs } => out.push((lhs, *op, rhs)),
            }
        }
        walk(self, &mut out);
        out
    }

    /// All tensor accesses on either side of every assignment.
    pub fn accesses(&self) -> Vec<&Access> {
        let mut out = Vec::new();
        for (lhs, _, rhs) in self.assignments() {
            if let LValue::Access(a) = lhs {
                out.push(a);
            }
            out.extend(rhs.accesses());
        }
        out
    }

    /// Index variables of the tensor being written (not a workspace).
    pub fn output_vars(&self) -> BTreeSet<String> {
        self.assignments()
            .into_iter()
            .filter_map(|(lhs, _, _)| match lhs {
                LValue::Access(a) => Some(a.indices.iter().map(|v| v.0.clone())),
                LValue::Workspace(_) => None,
            })
            .flatten()
            .collect()
    }

    /// Loop annotations plus `parallelize` relations, in that order.
    pub fn annotations(&self) -> Vec<(&IndexVar, &ParallelAnnotation)> {
        let mut out: Vec<_> = self.foralls().into_iter().filter_map(|(v, a)| a.map(|a| (v, a))).collect();
        for r in self.relations() {
            if let Relation::Parallelize { var, annotation } = r {
                out.push((var, annotation));
            }
        }
        out
    }

    pub fn group_annotation(&self) -> Option<(&IndexVar, &ParallelAnnotation)> {
        self.annotations().into_iter().find(|(_, a)| a.unit == ParallelUnit::GPUGroup)
    }

    pub fn hardware_var(&self, unit: ParallelUnit) -> Option<&IndexVar> {
        self.annotations().into_iter().find(|(_, a)| a.unit == unit).map(|(v, _)| v)
    }

    /// Resolves the variable a `GPUGroup` annotation applies to. A group
    /// bound to a variable the statement never defines is read as the
    /// `GPUThread` variable when that variable iterates position space,
    /// which is how a group written against `jpos1` in an `fpos`-based
    /// schedule is meant.
    pub fn resolve_group_var(&self) -> Option<IndexVar> {
        let (var, _) = self.group_annotation()?;
        if self.defined_vars().contains(var.name()) {
            return Some(var.clone());
        }
        let thread = self.hardware_var(ParallelUnit::GPUThread)?;
        let graph = ProvenanceGraph::new(self.relations());
        graph.is_position_space(thread).then(|| thread.clone())
    }

    /// Forall variables plus every variable a relation introduces or uses
    /// as a parent.
    pub fn defined_vars(&self) -> HashSet<String> {
        let mut s: HashSet<String> = self.foralls().iter().map(|(v, _)| v.0.clone()).collect();
        for r in self.relations() {
            for v in r.parents().into_iter().chain(r.children()) {
                s.insert(v.0.clone());
            }
        }
        s
    }

    pub fn provenance(&self, var: &IndexVar) -> Option<Provenance> {
        let graph = ProvenanceGraph::new(self.relations());
        if let Some(r) = graph.defining(var) {
            return Some(match r {
                Relation::Split { parent, outer, factor, .. } => {
                    if outer == var {
                        Provenance::SplitOuter { parent: parent.clone(), factor: factor.clone() }
                    } else {
                        Provenance::SplitInner { parent: parent.clone(), factor: factor.clone() }
                    }
                }
                Relation::Fuse { outer, inner, .. } => Provenance::Fused { outer: outer.clone(), inner: inner.clone() },
                Relation::Pos { var, access, .. } => Provenance::PosSpace { var: var.clone(), access: access.clone() },
                Relation::Bound { parent, extent, kind, .. } => {
                    Provenance::Bounded { parent: parent.clone(), extent: extent.clone(), kind: *kind }
                }
                Relation::Parallelize { .. } => unreachable!("parallelize defines no variable"),
            });
        }
        self.defined_vars().contains(var.name()).then_some(Provenance::Root)
    }

    /// Replaces every symbolic parameter with its value.
    pub fn substitute(&self, params: &Params) -> CinStmt {
        match self {
            CinStmt::Forall { var, body, annotation } => CinStmt::Forall {
                var: var.clone(),
                body: Box::new(body.substitute(params)),
                annotation: annotation.clone().map(|mut a| {
                    if let Some(g) = &mut a.group {
                        g.size = g.size.substitute(params);
                    }
                    a
                }),
            },
            CinStmt::Where { consumer, producer } => CinStmt::Where {
                consumer: Box::new(consumer.substitute(params)),
                producer: Box::new(producer.substitute(params)),
            },
            CinStmt::Assign { .. } => self.clone(),
            CinStmt::SuchThat { body, relations } => CinStmt::SuchThat {
                body: Box::new(body.substitute(params)),
                relations: relations.iter().map(|r| r.substitute(params)).collect(),
            },
        }
    }

    /// Structural invariant check. Returns one message per violation.
    pub fn check(&self) -> Vec<String> {
        let mut diags = Vec::new();

        let defined = self.defined_vars();
        for a in self.accesses() {
            for v in &a.indices {
                if !defined.contains(v.name()) {
                    diags.push(format!("unbound index variable '{v}' in access {}", a.tensor));
                }
            }
        }

        let mut seen: HashMap<ParallelUnit, usize> = HashMap::new();
        for (_, a) in self.annotations() {
            *seen.entry(a.unit).or_default() += 1;
        }
        for unit in [ParallelUnit::GPUBlock, ParallelUnit::GPUWarp, ParallelUnit::GPUThread, ParallelUnit::GPUGroup] {
            if seen.get(&unit).copied().unwrap_or(0) > 1 {
                diags.push(format!("duplicate hardware unit {unit:?}"));
            }
        }
        for (v, a) in self.annotations() {
            if (a.unit == ParallelUnit::GPUGroup) != a.group.is_some() {
                diags.push(format!("group attributes on '{v}' do not match unit {:?}", a.unit));
            }
        }

        check_wheres(self, &mut diags);
        diags.extend(ProvenanceGraph::new(self.relations()).check());
        diags
    }
}

fn check_wheres(s: &CinStmt, diags: &mut Vec<String>) {
    match s {
        CinStmt::Forall { body, .. } | CinStmt::SuchThat { body, .. } => check_wheres(body, diags),
        CinStmt::Assign { .. } => {}
        CinStmt::Where { consumer, producer } => {
            let reads: BTreeSet<&str> =
                consumer.assignments().iter().flat_map(|(_, _, rhs)| rhs.workspaces()).collect();
            let writes: BTreeSet<&str> = producer
                .assignments()
                .iter()
                .filter_map(|(lhs, _, _)| match lhs {
                    LValue::Workspace(w) => Some(w.as_str()),
                    LValue::Access(_) => None,
                })
                .collect();
            let tensor_writes = producer.assignments().iter().any(|(lhs, _, _)| matches!(lhs, LValue::Access(_)));
            if tensor_writes || writes.is_empty() || !writes.is_subset(&reads) {
                diags.push("where producer must write only the workspace its consumer reads".into());
            }
            check_wheres(consumer, diags);
            check_wheres(producer, diags);
        }
    }
}

/// Index over the relation list: which relation introduced each variable.
pub struct ProvenanceGraph<'a> {
    relations: &'a [Relation],
    defining: HashMap<&'a str, Vec<&'a Relation>>,
}

impl<'a> ProvenanceGraph<'a> {
    pub fn new(relations: &'a [Relation]) -> Self {
        let mut defining: HashMap<&str, Vec<&Relation>> = HashMap::new();
        for r in relations {
            for c in r.children() {
                defining.entry(c.name()).or_default().push(r);
            }
        }
        ProvenanceGraph { relations, defining }
    }

    pub fn defining(&self, var: &IndexVar) -> Option<&'a Relation> {
        self.defining.get(var.name()).and_then(|v| v.first().copied())
    }

    /// The relation in which `var` is a parent, if any.
    pub fn consuming(&self, var: &IndexVar) -> Option<&'a Relation> {
        self.relations.iter().find(|r| r.parents().contains(&var))
    }

    pub fn parents(&self, var: &IndexVar) -> Vec<&'a IndexVar> {
        self.defining(var).map(|r| r.parents()).unwrap_or_default()
    }

    /// Root variables `var` derives from. Assumes the graph is acyclic.
    pub fn roots(&self, var: &IndexVar) -> BTreeSet<String> {
        let mut out = BTreeSet::new();
        let mut stack = vec![var.clone()];
        let mut guard = 0;
        while let Some(v) = stack.pop() {
            guard += 1;
            if guard > 10_000 {
                break;
            }
            let ps = self.parents(&v);
            if ps.is_empty() {
                out.insert(v.0.clone());
            } else {
                stack.extend(ps.into_iter().cloned());
            }
        }
        out
    }

    /// True if `var` is a position-space variable or derived from one.
    pub fn is_position_space(&self, var: &IndexVar) -> bool {
        let mut cur = vec![var];
        let mut steps = 0;
        while let Some(v) = cur.pop() {
            steps += 1;
            if steps > 10_000 {
                return false;
            }
            match self.defining(v) {
                Some(Relation::Pos { .. }) => return true,
                Some(r) => cur.extend(r.parents()),
                None => {}
            }
        }
        false
    }

    pub fn check(&self) -> Vec<String> {
        let mut diags = Vec::new();
        for (name, rels) in &self.defining {
            if rels.len() > 1 {
                diags.push(format!("variable '{name}' is introduced by more than one relation"));
            }
        }
        // cycle detection by depth-first search over child -> parent edges
        let mut state: HashMap<&str, u8> = HashMap::new();
        fn visit<'b>(g: &ProvenanceGraph<'b>, v: &'b str, state: &mut HashMap<&'b str, u8>) -> bool {
            match state.get(v) {
                Some(1) => return false,
                Some(2) => return true,
                _ => {}
            }
            state.insert(v, 1);
            if let Some(rels) = g.defining.get(v) {
                for r in rels {
                    for p in r.parents() {
                        if !visit(g, p.name(), state) {
                            return false;
                        }
                    }
                }
            }
            state.insert(v, 2);
            true
        }
        let mut names: Vec<&str> = self.defining.keys().copied().collect();
        names.sort_unstable();
        for n in names {
            if !visit(self, n, &mut state) {
                diags.push(format!("provenance cycle through '{n}'"));
                break;
            }
        }
        diags
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spmm_is_three_foralls_over_accumulate() {
        let s = CinStmt::spmm();
        let vars: Vec<_> = s.foralls().iter().map(|(v, _)| v.0.clone()).collect();
        assert_eq!(vars, ["i", "j", "k"]);
        let assigns = s.assignments();
        assert_eq!(assigns.len(), 1);
        assert_eq!(assigns[0].1, AssignOp::Add);
        assert!(s.check().is_empty());
    }

    #[test]
    fn detects_cycles_and_double_definitions() {
        let rels = vec![
            Relation::Split { parent: "a".into(), outer: "b".into(), inner: "c".into(), factor: 2.into() },
            Relation::Split { parent: "b".into(), outer: "a".into(), inner: "d".into(), factor: 2.into() },
        ];
        let g = ProvenanceGraph::new(&rels);
        assert!(g.check().iter().any(|d| d.contains("cycle")));

        let rels = vec![
            Relation::Split { parent: "i".into(), outer: "x".into(), inner: "y".into(), factor: 2.into() },
            Relation::Bound { parent: "k".into(), bounded: "x".into(), extent: 4.into(), kind: BoundType::MaxExact },
        ];
        assert!(!ProvenanceGraph::new(&rels).check().is_empty());
    }

    #[test]
    fn roots_follow_fuse_and_pos() {
        let rels = vec![
            Relation::Fuse { outer: "i".into(), inner: "j".into(), fused: "f".into() },
            Relation::Pos { var: "f".into(), pos_var: "fpos".into(), access: Access::new("A", &["i", "j"]) },
        ];
        let g = ProvenanceGraph::new(&rels);
        let roots: Vec<_> = g.roots(&"fpos".into()).into_iter().collect();
        assert_eq!(roots, ["i", "j"]);
        assert!(g.is_position_space(&"fpos".into()));
        assert!(!g.is_position_space(&"i".into()));
    }
}
