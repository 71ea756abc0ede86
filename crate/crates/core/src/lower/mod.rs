//! Lowering from scheduled CIN to LLIR, the imperative kernel IR the
//! simulator runs and the CUDA printer renders.

mod llir;
mod search;

pub use llir::{dump_nodes, Array, BinOp, Dim, IfKind, LExpr, LlirNode, MacroKind, Ty};
pub use search::{binary_search_before, compute_block_starts, search_cost};

use std::collections::{HashMap, HashSet};

use thiserror::Error;

use crate::cin::{
    Access, AssignOp, CinStmt, Expr, IndexVar, LValue, OutputRace, ParallelUnit, Params, ProvenanceGraph,
    ReductionStrategy, Relation, SizeError,
};
use crate::schedule::validate_schedule;
use crate::sparse::CsrMatrix;

pub const WARP_SIZE: usize = 32;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LowerError {
    #[error("schedule is not lowerable: {}", .0.join("; "))]
    Invalid(Vec<String>),
    #[error(transparent)]
    Size(#[from] SizeError),
    #[error("unlowerable construct: {0}")]
    Unlowerable(String),
}

type Result<T> = std::result::Result<T, LowerError>;

/// A kernel ready to launch on one sparse operand.
#[derive(Clone, Debug, PartialEq)]
pub struct LoweredKernel {
    pub body: Vec<LlirNode>,
    pub grid_size: usize,
    /// Launched threads per block, a multiple of 32.
    pub block_size: usize,
    /// Threads per block that run the body; the rest stay masked.
    pub active_lanes: usize,
    /// Row search window per block (empty when unused).
    pub block_starts: Vec<usize>,
    pub rows: usize,
    pub cols: usize,
    pub nnz: usize,
    /// Dense column count the kernel was specialised for.
    pub n: usize,
    /// Group reduction the kernel ends in, if any.
    pub group: Option<(ReductionStrategy, u32)>,
}

impl LoweredKernel {
    /// Stable text form: a header line followed by the body.
    pub fn dump(&self) -> String {
        let group = match self.group {
            Some((ReductionStrategy::Parallel, g)) => format!(" group=parallel/{g}"),
            Some((ReductionStrategy::Segment, g)) => format!(" group=segment/{g}"),
            None => String::new(),
        };
        format!(
            "kernel grid={} block={} lanes={} N={}{group}\n{}",
            self.grid_size,
            self.block_size,
            self.active_lanes,
            self.n,
            dump_nodes(&self.body)
        )
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
enum Writeback {
    Store,
    Atomic,
    Macro(MacroKind, u32),
}

enum Item {
    Node(LlirNode),
    /// Lanes for which `cond` holds are out of range. `zero_ext` names the
    /// workspace to zero instead of leaving.
    Guard {
        cond: LExpr,
        zero_ext: Option<String>,
    },
    /// End of the region a zero-extension guard covers.
    Barrier,
}

fn finish(items: Vec<Item>, in_loop: bool) -> Vec<LlirNode> {
    let mut out = Vec::new();
    let mut rest: std::collections::VecDeque<Item> = items.into();
    while let Some(item) = rest.pop_front() {
        match item {
            Item::Node(n) => out.push(n),
            Item::Barrier => {}
            Item::Guard { cond, zero_ext: Some(ws) } => {
                let end = rest.iter().position(|i| matches!(i, Item::Barrier)).unwrap_or(rest.len());
                let inner: Vec<Item> = rest.drain(..end).collect();
                out.push(LlirNode::If {
                    cond,
                    then: vec![LlirNode::Assign { name: ws, value: LExpr::Real(0.0) }],
                    els: Some(finish(inner, in_loop)),
                    kind: IfKind::ZeroExtension,
                });
            }
            Item::Guard { cond, zero_ext: None } if in_loop => {
                out.push(LlirNode::If { cond, then: vec![LlirNode::Break], els: None, kind: IfKind::Plain })
            }
            Item::Guard { cond, zero_ext: None } => {
                let inner = finish(rest.drain(..).collect(), false);
                out.push(LlirNode::If {
                    cond: LExpr::Not(Box::new(cond)),
                    then: inner,
                    els: None,
                    kind: IfKind::Plain,
                });
            }
        }
    }
    out
}

fn decl(name: &str, init: LExpr) -> Item {
    Item::Node(LlirNode::VarDecl { name: name.to_string(), ty: Ty::Int, init })
}

fn nnz_expr() -> LExpr {
    LExpr::load(Array::APos, LExpr::Dim(Dim::A1))
}

/// Index roles fixed by the SpMM shape `C(i,k) += A(i,j) * B(j,k)`.
struct Roles {
    row: String,
    col: String,
    dense: String,
}

struct Emitter<'a> {
    graph: ProvenanceGraph<'a>,
    roles: Roles,
    n: i64,
    ext: HashMap<String, LExpr>,
    hw: HashMap<String, LExpr>,
    scopes: Vec<HashSet<String>>,
    a_pos: Option<String>,
    deferred_guard: Option<LExpr>,
    block_var: Option<String>,
    uses_block_starts: bool,
    segment: bool,
    writeback: Writeback,
    forall_vars: HashSet<String>,
    /// Workspace of the innermost `where` being lowered.
    workspace: Option<String>,
}

impl<'a> Emitter<'a> {
    fn known(&self, v: &str) -> bool {
        self.scopes.iter().any(|s| s.contains(v))
    }

    fn mark(&mut self, v: &str) {
        self.scopes.last_mut().expect("scope").insert(v.to_string());
    }

    /// The fused position relation `(fuse, pos)` that `v` takes part in.
    fn fused_pos(&self, v: &IndexVar) -> Option<(&'a Relation, &'a Relation)> {
        let fuse = self.graph.consuming(v)?;
        if let Relation::Fuse { fused, .. } = fuse {
            if let Some(pos @ Relation::Pos { .. }) = self.graph.consuming(fused) {
                return Some((fuse, pos));
            }
        }
        None
    }

    fn is_fused_pos_var(&self, v: &IndexVar) -> bool {
        match self.graph.defining(v) {
            Some(Relation::Pos { var, .. }) => matches!(self.graph.defining(var), Some(Relation::Fuse { .. })),
            _ => false,
        }
    }

    /// LLIR name of a CIN variable. Absolute positions into A get an `A`
    /// suffix.
    fn name(&self, v: &IndexVar) -> String {
        if self.is_fused_pos_var(v) {
            format!("{v}A")
        } else {
            v.0.clone()
        }
    }

    fn ext(&self, v: &IndexVar) -> Result<LExpr> {
        self.ext.get(v.name()).cloned().ok_or_else(|| LowerError::Unlowerable(format!("no extent for '{v}'")))
    }

    fn compute_ext(&mut self, v: &IndexVar) -> Result<LExpr> {
        if let Some(e) = self.ext.get(v.name()) {
            return Ok(e.clone());
        }
        let e = match self.graph.defining(v) {
            None if v.0 == self.roles.row => LExpr::Dim(Dim::A1),
            None if v.0 == self.roles.col => LExpr::Dim(Dim::A2),
            None if v.0 == self.roles.dense => LExpr::Int(self.n),
            None => return Err(LowerError::Unlowerable(format!("'{v}' indexes no tensor"))),
            Some(Relation::Split { parent, outer, factor, .. }) => {
                let f = factor.eval_literal()?;
                if v == outer {
                    let p = self.compute_ext(parent)?;
                    LExpr::ceil_div(p, LExpr::Int(f))
                } else {
                    LExpr::Int(f)
                }
            }
            Some(Relation::Bound { extent, .. }) => LExpr::Int(extent.eval_literal()?),
            Some(Relation::Fuse { outer, inner, .. }) => LExpr::mul(self.compute_ext(outer)?, self.compute_ext(inner)?),
            Some(Relation::Pos { var, access, .. }) => {
                let roots = self.graph.roots(var);
                let (row, col) = (&access.indices[0], &access.indices[1]);
                if roots.contains(row.name()) && roots.contains(col.name()) {
                    nnz_expr()
                } else {
                    let i = LExpr::var(row.name());
                    LExpr::sub(
                        LExpr::load(Array::APos, LExpr::add(i.clone(), LExpr::Int(1))),
                        LExpr::load(Array::APos, i),
                    )
                }
            }
            Some(Relation::Parallelize { .. }) => unreachable!(),
        };
        self.ext.insert(v.0.clone(), e.clone());
        Ok(e)
    }

    /// Expression for `v` in terms of loop variables, without emitting.
    fn inline(&self, v: &IndexVar) -> Result<LExpr> {
        if self.forall_vars.contains(v.name()) {
            return Ok(LExpr::var(&self.name(v)));
        }
        match self.graph.consuming(v) {
            Some(Relation::Split { outer, inner, factor, .. }) => {
                Ok(LExpr::add(LExpr::mul(self.inline(outer)?, LExpr::Int(factor.eval_literal()?)), self.inline(inner)?))
            }
            Some(Relation::Bound { bounded, .. }) => self.inline(bounded),
            _ => Err(LowerError::Unlowerable(format!("cannot express '{v}' from loop variables"))),
        }
    }

    fn guard_for(&self, v: &IndexVar, value_bound: Option<i64>) -> Result<Option<LExpr>> {
        let ext = self.ext(v)?;
        let exact = match (ext.as_int(), value_bound) {
            (Some(e), Some(b)) => b <= e,
            _ => false,
        };
        Ok((!exact).then(|| LExpr::bin(BinOp::Ge, LExpr::var(&self.name(v)), ext)))
    }

    /// Emits whatever is needed for `v` to hold its value.
    fn need(&mut self, v: &IndexVar, out: &mut Vec<Item>) -> Result<()> {
        if self.known(v.name()) {
            return Ok(());
        }
        if self.forall_vars.contains(v.name()) {
            return Err(LowerError::Unlowerable(format!("'{v}' is used outside its loop")));
        }
        if self.fused_pos(v).is_some() {
            return self.need_fused(v, out);
        }
        let Some(rel) = self.graph.consuming(v) else {
            return Err(LowerError::Unlowerable(format!("no way to compute '{v}'")));
        };
        match rel {
            Relation::Split { outer, inner, factor, .. } => {
                self.need(outer, out)?;
                self.need(inner, out)?;
                let f = factor.eval_literal()?;
                let value =
                    LExpr::add(LExpr::mul(LExpr::var(&self.name(outer)), LExpr::Int(f)), LExpr::var(&self.name(inner)));
                let name = self.name(v);
                out.push(decl(&name, value));
                self.mark(v.name());
                let bound = self.ext(outer)?.as_int().map(|o| o * f);
                if let Some(cond) = self.guard_for(v, bound)? {
                    if self.is_fused_pos_var(v) {
                        self.deferred_guard = Some(cond);
                    } else {
                        out.push(Item::Guard { cond, zero_ext: None });
                    }
                }
            }
            Relation::Bound { bounded, .. } => {
                self.need(bounded, out)?;
                out.push(decl(&self.name(v), LExpr::var(&self.name(bounded))));
                self.mark(v.name());
                let bound = self.ext(bounded)?.as_int();
                if let Some(cond) = self.guard_for(v, bound)? {
                    out.push(Item::Guard { cond, zero_ext: None });
                }
            }
            Relation::Fuse { outer, inner, fused } => {
                self.need(fused, out)?;
                let inner_ext = self.ext(inner)?;
                let f = LExpr::var(&self.name(fused));
                out.push(decl(&self.name(outer), LExpr::div(f.clone(), inner_ext.clone())));
                out.push(decl(&self.name(inner), LExpr::rem(f, inner_ext)));
                self.mark(outer.name());
                self.mark(inner.name());
            }
            Relation::Pos { access, pos_var, .. } => {
                let row = access.indices[0].clone();
                self.need(&row, out)?;
                self.need(pos_var, out)?;
                let abs = format!("{pos_var}A");
                out.push(decl(
                    &abs,
                    LExpr::add(LExpr::load(Array::APos, LExpr::var(&self.name(&row))), LExpr::var(&self.name(pos_var))),
                ));
                out.push(decl(v.name(), LExpr::load(Array::ACrd, LExpr::var(&abs))));
                self.mark(v.name());
                self.a_pos = Some(abs);
            }
            Relation::Parallelize { .. } => unreachable!(),
        }
        Ok(())
    }

    fn emit_window(&mut self, out: &mut Vec<Item>) {
        if self.known("pA2_begin") {
            return;
        }
        let (begin, end) = match (&self.block_var, self.uses_block_starts) {
            (Some(b), true) => {
                let b = LExpr::var(b);
                (
                    LExpr::load(Array::BlockStarts, b.clone()),
                    LExpr::bin(
                        BinOp::Min,
                        LExpr::add(LExpr::load(Array::BlockStarts, LExpr::add(b, LExpr::Int(1))), LExpr::Int(1)),
                        LExpr::Dim(Dim::A1),
                    ),
                )
            }
            _ => (LExpr::Int(0), LExpr::Dim(Dim::A1)),
        };
        out.push(decl("pA2_begin", begin));
        out.push(decl("pA2_end", end));
        self.mark("pA2_begin");
    }

    fn search(&self, target: LExpr) -> LExpr {
        LExpr::BinarySearchBefore {
            array: Array::APos,
            lo: Box::new(LExpr::var("pA2_begin")),
            hi: Box::new(LExpr::var("pA2_end")),
            target: Box::new(target),
        }
    }

    fn advance_rows(&self, pos: &str, row: &str) -> LlirNode {
        LlirNode::WhileLoop {
            cond: LExpr::bin(
                BinOp::Eq,
                LExpr::var(pos),
                LExpr::load(Array::APos, LExpr::add(LExpr::var("i_pos"), LExpr::Int(1))),
            ),
            body: vec![
                LlirNode::Assign { name: "i_pos".into(), value: LExpr::add(LExpr::var("i_pos"), LExpr::Int(1)) },
                LlirNode::Assign { name: row.into(), value: LExpr::var("i_pos") },
            ],
        }
    }

    /// Row and column of a fused position: search for the row, guard the
    /// position, read the column, then step over empty rows.
    fn need_fused(&mut self, v: &IndexVar, out: &mut Vec<Item>) -> Result<()> {
        let (fuse, pos) = self.fused_pos(v).expect("fused");
        let (Relation::Fuse { outer: row, inner: col, .. }, Relation::Pos { pos_var, .. }) = (fuse, pos) else {
            unreachable!()
        };
        self.deferred_guard = None;
        self.need(pos_var, out)?;
        let guard = self.deferred_guard.take();
        let p = self.name(pos_var);
        self.emit_window(out);
        out.push(decl("i_pos", self.search(LExpr::var(&p))));
        out.push(decl(row.name(), LExpr::var("i_pos")));
        if let Some(cond) = guard {
            let zero_ext = self.segment.then(|| self.workspace.clone()).flatten();
            out.push(Item::Guard { cond, zero_ext });
        }
        out.push(decl(col.name(), LExpr::load(Array::ACrd, LExpr::var(&p))));
        out.push(Item::Node(self.advance_rows(&p, row.name())));
        self.mark(row.name());
        self.mark(col.name());
        self.a_pos = Some(p);
        Ok(())
    }
}

impl<'a> Emitter<'a> {
    fn with_scope<T>(&mut self, f: impl FnOnce(&mut Self) -> Result<T>) -> Result<T> {
        self.scopes.push(HashSet::new());
        let saved = self.a_pos.clone();
        let r = f(self);
        self.scopes.pop();
        self.a_pos = saved;
        r
    }

    fn loop_node(&mut self, var: &str, begin: LExpr, end: LExpr, body: Vec<Item>) -> Item {
        Item::Node(LlirNode::ForLoop { var: var.to_string(), begin, end, step: 1, body: finish(body, true) })
    }

    /// Ensures every CIN variable an extent expression reads is available.
    fn need_expr_vars(&mut self, e: &LExpr, out: &mut Vec<Item>) -> Result<()> {
        let mut vars = Vec::new();
        e.vars(&mut vars);
        for v in vars {
            self.need(&IndexVar::new(v), out)?;
        }
        Ok(())
    }

    fn emit_stmt(&mut self, s: &CinStmt, out: &mut Vec<Item>) -> Result<()> {
        match s {
            CinStmt::SuchThat { body, .. } => self.emit_stmt(body, out),
            CinStmt::Forall { var, body, .. } if self.hw.contains_key(var.name()) => {
                out.push(decl(&self.name(var), self.hw[var.name()].clone()));
                self.mark(var.name());
                self.emit_stmt(body, out)
            }
            CinStmt::Forall { var, body, annotation } => {
                if annotation.as_ref().is_some_and(|a| a.unit == ParallelUnit::GPUGroup) {
                    return Err(LowerError::Unlowerable(format!("GPUGroup loop '{var}' is not the thread loop")));
                }
                if self.graph.defining(var).is_none() && var.0 == self.roles.col {
                    return self.emit_row_walk(var, body, out);
                }
                let end = self.ext(var)?;
                self.need_expr_vars(&end, out)?;
                let name = self.name(var);
                let inner = self.with_scope(|e| {
                    e.mark(var.name());
                    let mut inner = Vec::new();
                    e.emit_stmt(body, &mut inner)?;
                    Ok(inner)
                })?;
                out.push(self.loop_node(&name, LExpr::Int(0), end, inner));
                Ok(())
            }
            CinStmt::Where { consumer, producer } => {
                let CinStmt::Assign { lhs, op, rhs: Expr::Workspace(ws) } = &**consumer else {
                    return Err(LowerError::Unlowerable("where consumer must reduce a workspace".into()));
                };
                self.emit_where(lhs, *op, ws, producer, out)
            }
            CinStmt::Assign { lhs: LValue::Workspace(ws), op, rhs } => self.emit_compute(ws, *op, rhs, out),
            CinStmt::Assign { lhs, op, rhs } => {
                let producer =
                    CinStmt::Assign { lhs: LValue::Workspace("val".into()), op: AssignOp::Set, rhs: rhs.clone() };
                self.emit_where(lhs, *op, "val", &producer, out)
            }
        }
    }

    /// Coordinate iteration over the stored entries of row `i`.
    fn emit_row_walk(&mut self, var: &IndexVar, body: &CinStmt, out: &mut Vec<Item>) -> Result<()> {
        let row = IndexVar::new(self.roles.row.clone());
        self.need(&row, out)?;
        let pos = format!("{var}posA");
        let i = LExpr::var(&self.name(&row));
        let (begin, end) =
            (LExpr::load(Array::APos, i.clone()), LExpr::load(Array::APos, LExpr::add(i, LExpr::Int(1))));
        let inner = self.with_scope(|e| {
            let mut inner = vec![decl(var.name(), LExpr::load(Array::ACrd, LExpr::var(&pos)))];
            e.mark(var.name());
            e.a_pos = Some(pos.clone());
            e.emit_stmt(body, &mut inner)?;
            Ok(inner)
        })?;
        out.push(self.loop_node(&pos, begin, end, inner));
        Ok(())
    }

    /// `ws (=|+=) A(i,j) * B(j,k)`.
    fn emit_compute(&mut self, ws: &str, op: AssignOp, rhs: &Expr, out: &mut Vec<Item>) -> Result<()> {
        let accesses = rhs.accesses();
        for a in &accesses {
            for v in &a.indices {
                self.need(v, out)?;
            }
        }
        let mut value: Option<LExpr> = None;
        for a in accesses {
            let term = self.load_access(a, out)?;
            value = Some(match value {
                None => term,
                Some(v) => LExpr::mul(v, term),
            });
        }
        for w in rhs.workspaces() {
            let t = LExpr::var(w);
            value = Some(match value {
                None => t,
                Some(v) => LExpr::mul(v, t),
            });
        }
        let value = value.ok_or_else(|| LowerError::Unlowerable("empty expression".into()))?;
        let value = match op {
            AssignOp::Set => value,
            AssignOp::Add => LExpr::add(LExpr::var(ws), value),
        };
        out.push(Item::Node(LlirNode::Assign { name: ws.to_string(), value }));
        Ok(())
    }

    fn load_access(&mut self, a: &Access, out: &mut Vec<Item>) -> Result<LExpr> {
        match a.tensor.as_str() {
            "A" => {
                let pos = self
                    .a_pos
                    .clone()
                    .ok_or_else(|| LowerError::Unlowerable("A is read outside position iteration".into()))?;
                Ok(LExpr::load(Array::AVals, LExpr::var(&pos)))
            }
            "B" => {
                let (j, k) = (&a.indices[0], &a.indices[1]);
                let idx =
                    LExpr::add(LExpr::mul(LExpr::var(&self.name(j)), LExpr::Dim(Dim::B2)), LExpr::var(&self.name(k)));
                out.push(decl("kB", idx));
                Ok(LExpr::load(Array::BVals, LExpr::var("kB")))
            }
            t => Err(LowerError::Unlowerable(format!("unknown input tensor {t}"))),
        }
    }

    fn output_index(&self, lhs: &Access) -> LExpr {
        let (i, k) = (&lhs.indices[0], &lhs.indices[1]);
        LExpr::add(LExpr::mul(LExpr::var(&self.name(i)), LExpr::Dim(Dim::C2)), LExpr::var(&self.name(k)))
    }

    fn writeback(&self, op: AssignOp, index: LExpr, ws: &str) -> LlirNode {
        let value = LExpr::var(ws);
        match (op, self.writeback) {
            (AssignOp::Set, _) => LlirNode::Store { array: Array::CVals, index, value },
            (_, Writeback::Macro(kind, g)) => {
                LlirNode::Macro { kind, group_size: g, array: Array::CVals, index, value }
            }
            (_, Writeback::Atomic) => LlirNode::AtomicAdd { array: Array::CVals, index, value },
            (_, Writeback::Store) => LlirNode::Store {
                array: Array::CVals,
                index: index.clone(),
                value: LExpr::add(LExpr::load(Array::CVals, index), value),
            },
        }
    }

    /// Loop variables of the producer's serial loops.
    fn producer_loops(s: &CinStmt, out: &mut Vec<IndexVar>) {
        match s {
            CinStmt::Forall { var, body, .. } => {
                out.push(var.clone());
                Self::producer_loops(body, out);
            }
            CinStmt::Where { consumer, producer } => {
                Self::producer_loops(consumer, out);
                Self::producer_loops(producer, out);
            }
            _ => {}
        }
    }

    /// Loop variables `v`'s value is computed from.
    fn loop_deps(&self, v: &IndexVar, out: &mut HashSet<String>) {
        if self.forall_vars.contains(v.name()) {
            out.insert(v.0.clone());
            return;
        }
        match self.graph.consuming(v) {
            Some(Relation::Fuse { fused, .. }) => match self.graph.consuming(fused) {
                Some(Relation::Pos { pos_var, .. }) => self.loop_deps(pos_var, out),
                _ => self.loop_deps(fused, out),
            },
            Some(r @ (Relation::Split { .. } | Relation::Bound { .. })) => {
                for c in r.children() {
                    self.loop_deps(c, out);
                }
            }
            Some(Relation::Pos { pos_var, access, .. }) => {
                self.loop_deps(pos_var, out);
                self.loop_deps(&access.indices[0], out);
            }
            _ => {}
        }
    }

    fn emit_where(
        &mut self,
        lhs: &LValue,
        op: AssignOp,
        ws: &str,
        producer: &CinStmt,
        out: &mut Vec<Item>,
    ) -> Result<()> {
        let LValue::Access(lhs) = lhs else {
            return Err(LowerError::Unlowerable("nested workspaces".into()));
        };
        let mut loops = Vec::new();
        Self::producer_loops(producer, &mut loops);
        let loop_names: HashSet<String> = loops.iter().map(|v| v.0.clone()).collect();
        let tracked: Vec<&IndexVar> = lhs
            .indices
            .iter()
            .filter(|v| {
                let mut d = HashSet::new();
                self.loop_deps(v, &mut d);
                !d.is_disjoint(&loop_names)
            })
            .collect();
        let saved_ws = self.workspace.replace(ws.to_string());
        out.push(Item::Node(LlirNode::VarDecl { name: ws.to_string(), ty: Ty::Real, init: LExpr::Real(0.0) }));
        let r = if tracked.is_empty() {
            self.emit_plain_where(lhs, op, ws, producer, out)
        } else {
            self.emit_tracked_where(lhs, op, ws, producer, &tracked, out)
        };
        self.workspace = saved_ws;
        r
    }

    fn emit_plain_where(
        &mut self,
        lhs: &Access,
        op: AssignOp,
        ws: &str,
        producer: &CinStmt,
        out: &mut Vec<Item>,
    ) -> Result<()> {
        // indices without a position guard first, so they stay visible
        // after a zero-extension branch
        let mut idx: Vec<&IndexVar> = lhs.indices.iter().collect();
        idx.sort_by_key(|v| self.fused_pos(v).is_some());
        for v in idx {
            self.need(v, out)?;
        }
        self.emit_stmt(producer, out)?;
        out.push(Item::Barrier);
        out.push(decl("kC", self.output_index(lhs)));
        out.push(Item::Node(self.writeback(op, LExpr::var("kC"), ws)));
        Ok(())
    }

    /// Producer loops walk consecutive non-zeros that may cross rows: keep
    /// a running row, flush the workspace whenever a row ends.
    fn emit_tracked_where(
        &mut self,
        lhs: &Access,
        op: AssignOp,
        ws: &str,
        producer: &CinStmt,
        tracked: &[&IndexVar],
        out: &mut Vec<Item>,
    ) -> Result<()> {
        if matches!(self.writeback, Writeback::Macro(..)) {
            return Err(LowerError::Unlowerable("group reduction over a row-crossing producer loop".into()));
        }
        let row = tracked[0];
        let Some((Relation::Fuse { outer, inner: col, .. }, Relation::Pos { pos_var, .. })) = self.fused_pos(row)
        else {
            return Err(LowerError::Unlowerable(format!("output index '{row}' depends on a producer loop")));
        };
        if tracked.len() != 1 || outer != row {
            return Err(LowerError::Unlowerable("only the row index may follow producer loops".into()));
        }
        for v in lhs.indices.iter().filter(|v| *v != row) {
            self.need(v, out)?;
        }
        let mut loops = Vec::new();
        Self::producer_loops(producer, &mut loops);
        let mut start = self.inline(pos_var)?;
        for l in &loops {
            start = start.substitute(&self.name(l), &LExpr::Int(0));
        }
        self.emit_window(out);
        out.push(decl("i_pos", self.search(start)));
        out.push(decl(row.name(), LExpr::var("i_pos")));

        let body = self.tracked_loops(producer, pos_var, row, col, lhs, op, ws)?;
        out.extend(body);
        out.push(decl("kC", self.output_index(lhs)));
        out.push(Item::Node(self.writeback(op, LExpr::var("kC"), ws)));
        Ok(())
    }

    #[allow(clippy::too_many_arguments)]
    fn tracked_loops(
        &mut self,
        s: &CinStmt,
        pos_var: &IndexVar,
        row: &IndexVar,
        col: &IndexVar,
        lhs: &Access,
        op: AssignOp,
        ws: &str,
    ) -> Result<Vec<Item>> {
        match s {
            CinStmt::Forall { var, body, annotation: None } => {
                let end = self.ext(var)?;
                let name = self.name(var);
                let inner = self.with_scope(|e| {
                    e.mark(var.name());
                    e.tracked_loops(body, pos_var, row, col, lhs, op, ws)
                })?;
                Ok(vec![self.loop_node(&name, LExpr::Int(0), end, inner)])
            }
            CinStmt::Assign { lhs: LValue::Workspace(w), op: pop, rhs } if w == ws => {
                let mut out = Vec::new();
                self.deferred_guard = None;
                self.need(pos_var, &mut out)?;
                let p = self.name(pos_var);
                if let Some(cond) = self.deferred_guard.take() {
                    out.push(Item::Guard { cond, zero_ext: None });
                }
                out.push(decl(col.name(), LExpr::load(Array::ACrd, LExpr::var(&p))));
                out.push(Item::Node(self.advance_rows(&p, row.name())));
                self.mark(row.name());
                self.mark(col.name());
                self.a_pos = Some(p.clone());
                self.emit_compute(ws, *pop, rhs, &mut out)?;
                let row_end = LExpr::bin(
                    BinOp::Eq,
                    LExpr::add(LExpr::var(&p), LExpr::Int(1)),
                    LExpr::load(Array::APos, LExpr::add(LExpr::var("i_pos"), LExpr::Int(1))),
                );
                out.push(Item::Node(LlirNode::If {
                    cond: row_end,
                    then: vec![
                        LlirNode::VarDecl { name: "kC".into(), ty: Ty::Int, init: self.output_index(lhs) },
                        self.writeback(op, LExpr::var("kC"), ws),
                        LlirNode::Assign { name: ws.to_string(), value: LExpr::Real(0.0) },
                    ],
                    els: None,
                    kind: IfKind::Plain,
                }));
                Ok(out)
            }
            _ => Err(LowerError::Unlowerable("row-crossing producer must be serial loops over one update".into())),
        }
    }
}

fn roles(cin: &CinStmt) -> Result<Roles> {
    let find = |t: &str| cin.accesses().into_iter().find(|a| a.tensor == t).cloned();
    match (find("A"), find("B"), find("C")) {
        (Some(a), Some(b), Some(c))
            if a.indices.len() == 2
                && b.indices.len() == 2
                && c.indices.len() == 2
                && a.indices[1] == b.indices[0]
                && c.indices[0] == a.indices[0]
                && c.indices[1] == b.indices[1] =>
        {
            Ok(Roles { row: a.indices[0].0.clone(), col: a.indices[1].0.clone(), dense: b.indices[1].0.clone() })
        }
        _ => Err(LowerError::Unlowerable("statement is not C(i,k) += A(i,j) * B(j,k)".into())),
    }
}

/// Evaluates a launch-time expression for a concrete matrix.
fn eval_static(e: &LExpr, a: &CsrMatrix, n: i64) -> Option<i64> {
    Some(match e {
        LExpr::Int(v) => *v,
        LExpr::Dim(Dim::A1) => a.num_rows as i64,
        LExpr::Dim(Dim::A2) => a.num_cols as i64,
        LExpr::Dim(Dim::B2 | Dim::C2) => n,
        LExpr::Load(Array::APos, i) => *a.row_ptr.get(usize::try_from(eval_static(i, a, n)?).ok()?)? as i64,
        LExpr::Bin(op, x, y) => {
            let (x, y) = (eval_static(x, a, n)?, eval_static(y, a, n)?);
            match op {
                BinOp::Add => x + y,
                BinOp::Sub => x - y,
                BinOp::Mul => x * y,
                BinOp::Div if y != 0 => x.div_euclid(y),
                BinOp::Rem if y != 0 => x.rem_euclid(y),
                BinOp::Min => x.min(y),
                _ => return None,
            }
        }
        _ => return None,
    })
}

/// Lowers a scheduled statement for sparse operand `a`. Symbolic sizes are
/// replaced by `params` first.
pub fn lower(cin: &CinStmt, a: &CsrMatrix, params: &Params) -> Result<LoweredKernel> {
    let cin = cin.substitute(params);
    let diags = validate_schedule(&cin);
    if !diags.is_empty() {
        return Err(LowerError::Invalid(diags));
    }
    let roles = roles(&cin)?;
    let relations = cin.relations();
    let graph = ProvenanceGraph::new(relations);
    let mut em = Emitter {
        graph,
        roles,
        n: params.n,
        ext: HashMap::new(),
        hw: HashMap::new(),
        scopes: vec![HashSet::new()],
        a_pos: None,
        deferred_guard: None,
        block_var: None,
        uses_block_starts: false,
        segment: false,
        writeback: Writeback::Store,
        forall_vars: cin.foralls().iter().map(|(v, _)| v.0.clone()).collect(),
        workspace: None,
    };
    let mut all_vars: Vec<IndexVar> = cin.defined_vars().into_iter().map(IndexVar).collect();
    all_vars.sort();
    for v in &all_vars {
        if em.graph.defining(v).is_some() || em.forall_vars.contains(v.name()) {
            em.compute_ext(v)?;
        }
    }

    let static_ext = |em: &Emitter<'_>, v: &IndexVar| -> Result<i64> {
        eval_static(&em.ext(v)?, a, params.n)
            .ok_or_else(|| LowerError::Unlowerable(format!("extent of '{v}' is not known at launch")))
    };
    let block = cin.hardware_var(ParallelUnit::GPUBlock).expect("validated").clone();
    let thread = cin.hardware_var(ParallelUnit::GPUThread).expect("validated").clone();
    let warp = cin.hardware_var(ParallelUnit::GPUWarp).cloned();
    let grid = static_ext(&em, &block)?.max(0) as usize;
    let t_ext = static_ext(&em, &thread)?;
    let w_ext = match &warp {
        Some(w) => static_ext(&em, w)?,
        None => 1,
    };
    if t_ext < 1 || w_ext < 1 {
        return Err(LowerError::Unlowerable("empty thread or warp extent".into()));
    }
    let lanes = (t_ext * w_ext) as usize;
    let block_size = lanes.div_ceil(WARP_SIZE) * WARP_SIZE;
    if block_size > 1024 {
        return Err(LowerError::Unlowerable(format!("{lanes} threads per block exceed 1024")));
    }
    em.hw.insert(block.0.clone(), LExpr::BlockIdx);
    em.hw.insert(
        thread.0.clone(),
        if warp.is_some() { LExpr::rem(LExpr::ThreadIdx, LExpr::Int(t_ext)) } else { LExpr::ThreadIdx },
    );
    if let Some(w) = &warp {
        em.hw.insert(w.0.clone(), LExpr::div(LExpr::ThreadIdx, LExpr::Int(t_ext)));
    }
    em.block_var = Some(em.name(&block));

    let mut block_starts = Vec::new();
    if let Some(Relation::Split { parent, outer, factor, .. }) = em.graph.defining(&block) {
        if outer == &block && em.is_fused_pos_var(parent) {
            let npb = factor.eval_literal()? as usize;
            block_starts = compute_block_starts(a, npb);
            em.uses_block_starts = true;
        }
    }

    let mut group = None;
    if let Some((_, ann)) = cin.group_annotation() {
        let g = ann.group.as_ref().expect("validated");
        let r = g.size.eval_literal()?;
        let size = r.min(t_ext);
        if size < 1 || t_ext % size != 0 || WARP_SIZE as i64 % size != 0 {
            return Err(LowerError::Unlowerable(format!("group of {r} does not tile {t_ext} threads")));
        }
        let kind = match g.strategy {
            ReductionStrategy::Parallel => MacroKind::AtomicAddGroup,
            ReductionStrategy::Segment => MacroKind::SegReduceGroup,
        };
        em.segment = g.strategy == ReductionStrategy::Segment;
        em.writeback = Writeback::Macro(kind, size as u32);
        group = Some((g.strategy, size as u32));
    } else if cin.annotations().iter().any(|(_, a)| a.race == OutputRace::Atomics) {
        em.writeback = Writeback::Atomic;
    }

    let mut items = Vec::new();
    em.emit_stmt(&cin, &mut items)?;
    Ok(LoweredKernel {
        body: finish(items, false),
        grid_size: grid,
        block_size,
        active_lanes: lanes,
        block_starts,
        rows: a.num_rows,
        cols: a.num_cols,
        nnz: a.nnz(),
        n: params.n as usize,
        group,
    })
}
