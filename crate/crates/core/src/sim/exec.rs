use std::cell::RefCell;
use std::collections::{HashMap, HashSet};

use super::group::{parallel_plan, segment_plan};
use super::{SimError, SimOptions};
use crate::lower::{search_cost, Array, BinOp, Dim, IfKind, LExpr, LlirNode, MacroKind, WARP_SIZE};

const STEP_LIMIT: u64 = 200_000_000;

#[derive(Clone, Copy, Debug, PartialEq)]
pub(crate) enum Value {
    I(i64),
    R(f64),
}

impl Value {
    fn int(self) -> i64 {
        match self {
            Value::I(v) => v,
            Value::R(v) => v as i64,
        }
    }

    fn real(self) -> f64 {
        match self {
            Value::I(v) => v as f64,
            Value::R(v) => v,
        }
    }
}

enum CExpr {
    Const(Value),
    Slot(usize),
    Block,
    Thread,
    Load(Array, Box<CExpr>),
    Bin(BinOp, Box<CExpr>, Box<CExpr>),
    Not(Box<CExpr>),
    Search(Box<CExpr>, Box<CExpr>, Box<CExpr>),
}

enum CNode {
    For { slot: usize, begin: CExpr, end: CExpr, step: i64, body: Vec<CNode> },
    While { cond: CExpr, body: Vec<CNode> },
    If { cond: CExpr, then: Vec<CNode>, els: Vec<CNode>, zero_ext: bool },
    Set { slot: usize, value: CExpr, real: bool },
    Store { index: CExpr, value: CExpr },
    Atomic { index: CExpr, value: CExpr },
    Macro { kind: MacroKind, group: usize, index: CExpr, value: CExpr },
    Break,
}

/// Kernel body with variables resolved to register slots.
pub(crate) struct Program {
    body: Vec<CNode>,
    slots: usize,
}

struct Compiler {
    slots: HashMap<String, usize>,
    dims: [i64; 4],
}

impl Compiler {
    fn slot(&mut self, name: &str) -> usize {
        let n = self.slots.len();
        *self.slots.entry(name.to_string()).or_insert(n)
    }

    fn expr(&mut self, e: &LExpr) -> Result<CExpr, SimError> {
        Ok(match e {
            LExpr::Int(v) => CExpr::Const(Value::I(*v)),
            LExpr::Real(v) => CExpr::Const(Value::R(*v)),
            LExpr::Var(v) => match self.slots.get(v) {
                Some(&s) => CExpr::Slot(s),
                None => return Err(SimError::Program(format!("variable '{v}' read before declaration"))),
            },
            LExpr::BlockIdx => CExpr::Block,
            LExpr::ThreadIdx => CExpr::Thread,
            LExpr::Dim(d) => CExpr::Const(Value::I(
                self.dims[match d {
                    Dim::A1 => 0,
                    Dim::A2 => 1,
                    Dim::B2 => 2,
                    Dim::C2 => 3,
                }],
            )),
            LExpr::Load(a, i) => CExpr::Load(*a, Box::new(self.expr(i)?)),
            LExpr::Bin(op, a, b) => CExpr::Bin(*op, Box::new(self.expr(a)?), Box::new(self.expr(b)?)),
            LExpr::Not(a) => CExpr::Not(Box::new(self.expr(a)?)),
            LExpr::BinarySearchBefore { array: Array::APos, lo, hi, target } => {
                CExpr::Search(Box::new(self.expr(lo)?), Box::new(self.expr(hi)?), Box::new(self.expr(target)?))
            }
            LExpr::BinarySearchBefore { array, .. } => {
                return Err(SimError::Program(format!("search over {} is unsupported", array.name())))
            }
        })
    }

    fn nodes(&mut self, nodes: &[LlirNode]) -> Result<Vec<CNode>, SimError> {
        nodes.iter().map(|n| self.node(n)).collect()
    }

    fn node(&mut self, n: &LlirNode) -> Result<CNode, SimError> {
        Ok(match n {
            LlirNode::ForLoop { var, begin, end, step, body } => {
                let (begin, end) = (self.expr(begin)?, self.expr(end)?);
                let slot = self.slot(var);
                if *step <= 0 {
                    return Err(SimError::Program(format!("loop over '{var}' has step {step}")));
                }
                CNode::For { slot, begin, end, step: *step, body: self.nodes(body)? }
            }
            LlirNode::WhileLoop { cond, body } => CNode::While { cond: self.expr(cond)?, body: self.nodes(body)? },
            LlirNode::If { cond, then, els, kind } => CNode::If {
                cond: self.expr(cond)?,
                then: self.nodes(then)?,
                els: match els {
                    Some(e) => self.nodes(e)?,
                    None => Vec::new(),
                },
                zero_ext: *kind == IfKind::ZeroExtension,
            },
            LlirNode::VarDecl { name, ty, init } => {
                let value = self.expr(init)?;
                CNode::Set { slot: self.slot(name), value, real: *ty == crate::lower::Ty::Real }
            }
            LlirNode::Assign { name, value } => {
                let value = self.expr(value)?;
                let slot = *self
                    .slots
                    .get(name)
                    .ok_or_else(|| SimError::Program(format!("assignment to undeclared '{name}'")))?;
                CNode::Set { slot, value, real: false }
            }
            LlirNode::Store { array: Array::CVals, index, value } => {
                CNode::Store { index: self.expr(index)?, value: self.expr(value)? }
            }
            LlirNode::AtomicAdd { array: Array::CVals, index, value } => {
                CNode::Atomic { index: self.expr(index)?, value: self.expr(value)? }
            }
            LlirNode::Macro { kind, group_size, array: Array::CVals, index, value } => {
                let g = *group_size as usize;
                if g == 0 || !WARP_SIZE.is_multiple_of(g) {
                    return Err(SimError::Program(format!("group size {g} does not divide the warp")));
                }
                CNode::Macro { kind: *kind, group: g, index: self.expr(index)?, value: self.expr(value)? }
            }
            LlirNode::Store { array, .. } | LlirNode::AtomicAdd { array, .. } | LlirNode::Macro { array, .. } => {
                return Err(SimError::Program(format!("{} is read-only", array.name())))
            }
            LlirNode::Break => CNode::Break,
        })
    }
}

pub(crate) fn compile(body: &[LlirNode], dims: [i64; 4]) -> Result<Program, SimError> {
    let mut c = Compiler { slots: HashMap::new(), dims };
    let body = c.nodes(body)?;
    Ok(Program { body, slots: c.slots.len() })
}

/// Read-only inputs of a launch.
pub(crate) struct Inputs<'a> {
    pub a_pos: &'a [i64],
    pub a_crd: &'a [i64],
    pub a_vals: &'a [f64],
    pub b_vals: &'a [f64],
    pub block_starts: &'a [i64],
}

/// Output matrix as seen by one block.
pub(crate) enum COut<'a> {
    Direct(&'a mut [f64]),
    /// Reads see `base` plus this block's own writes; writes are logged for
    /// an ordered merge, and reads that fell through to `base` are recorded
    /// so the merge can detect cross-block dependences.
    Overlay {
        base: &'a [f64],
        local: HashMap<usize, f64>,
        log: Vec<(usize, Write)>,
        base_reads: RefCell<HashSet<usize>>,
    },
}

#[derive(Clone, Copy, Debug)]
pub(crate) enum Write {
    Add(f64),
    Set(f64),
}

impl<'a> COut<'a> {
    pub fn overlay(base: &'a [f64]) -> Self {
        COut::Overlay { base, local: HashMap::new(), log: Vec::new(), base_reads: RefCell::new(HashSet::new()) }
    }

    fn len(&self) -> usize {
        match self {
            COut::Direct(c) => c.len(),
            COut::Overlay { base, .. } => base.len(),
        }
    }

    fn get(&self, i: usize) -> f64 {
        match self {
            COut::Direct(c) => c[i],
            COut::Overlay { base, local, base_reads, .. } => match local.get(&i) {
                Some(&v) => v,
                None => {
                    base_reads.borrow_mut().insert(i);
                    base[i]
                }
            },
        }
    }

    fn write(&mut self, i: usize, w: Write, round: impl Fn(f64) -> f64) {
        match self {
            COut::Direct(c) => {
                c[i] = match w {
                    Write::Add(v) => round(c[i] + v),
                    Write::Set(v) => v,
                }
            }
            COut::Overlay { base, local, log, .. } => {
                let cur = local.get(&i).copied().unwrap_or(base[i]);
                local.insert(
                    i,
                    match w {
                        Write::Add(v) => round(cur + v),
                        Write::Set(v) => v,
                    },
                );
                log.push((i, w));
            }
        }
    }
}

/// Counters for one block.
#[derive(Default)]
pub(crate) struct BlockStats {
    pub warp_steps: Vec<u64>,
    pub atomic_ops: u64,
    pub idle_lane_steps: u64,
}

struct Warp {
    regs: Vec<Value>,
    slots: usize,
    filler: u32,
    steps: u64,
    idle: u64,
    atomics: u64,
}

type Mask = u32;

pub(crate) struct Machine<'a> {
    pub prog: &'a Program,
    pub inputs: &'a Inputs<'a>,
    pub opts: SimOptions,
}

struct Ctx<'m, 'c> {
    block: usize,
    warp: usize,
    lane_base: usize,
    out: &'m mut COut<'c>,
}

impl Machine<'_> {
    fn round(&self, v: f64) -> f64 {
        if self.opts.single_precision {
            v as f32 as f64
        } else {
            v
        }
    }

    fn fault(&self, ctx: &Ctx<'_, '_>, lane: usize, node: &str, msg: impl Into<String>) -> SimError {
        SimError::Fault { block: ctx.block, warp: ctx.warp, lane, node: node.to_string(), msg: msg.into() }
    }

    fn load(&self, ctx: &Ctx<'_, '_>, lane: usize, a: Array, i: i64) -> Result<Value, SimError> {
        let oob = || self.fault(ctx, lane, a.name(), format!("index {i} out of bounds"));
        let i = usize::try_from(i).map_err(|_| oob())?;
        Ok(match a {
            Array::APos => Value::I(*self.inputs.a_pos.get(i).ok_or_else(oob)?),
            Array::ACrd => Value::I(*self.inputs.a_crd.get(i).ok_or_else(oob)?),
            Array::BlockStarts => Value::I(*self.inputs.block_starts.get(i).ok_or_else(oob)?),
            Array::AVals => Value::R(*self.inputs.a_vals.get(i).ok_or_else(oob)?),
            Array::BVals => Value::R(*self.inputs.b_vals.get(i).ok_or_else(oob)?),
            Array::CVals => {
                if i >= ctx.out.len() {
                    return Err(oob());
                }
                Value::R(ctx.out.get(i))
            }
        })
    }

    /// Evaluates `e` for one lane; `extra` collects search steps.
    fn eval(&self, ctx: &Ctx<'_, '_>, w: &Warp, lane: usize, e: &CExpr, extra: &mut u64) -> Result<Value, SimError> {
        Ok(match e {
            CExpr::Const(v) => *v,
            CExpr::Slot(s) => w.regs[lane * w.slots + s],
            CExpr::Block => Value::I(ctx.block as i64),
            CExpr::Thread => Value::I((ctx.lane_base + lane) as i64),
            CExpr::Load(a, i) => {
                let i = self.eval(ctx, w, lane, i, extra)?.int();
                self.load(ctx, lane, *a, i)?
            }
            CExpr::Not(a) => Value::I((self.eval(ctx, w, lane, a, extra)?.int() == 0) as i64),
            CExpr::Bin(op, a, b) => {
                let (x, y) = (self.eval(ctx, w, lane, a, extra)?, self.eval(ctx, w, lane, b, extra)?);
                bin(*op, x, y).ok_or_else(|| self.fault(ctx, lane, "expression", "division by zero"))?
            }
            CExpr::Search(lo, hi, target) => {
                let lo = self.eval(ctx, w, lane, lo, extra)?.int();
                let hi = self.eval(ctx, w, lane, hi, extra)?.int();
                let t = self.eval(ctx, w, lane, target, extra)?.int();
                let pos = self.inputs.a_pos;
                if lo < 0 || hi < lo || hi as usize > pos.len() {
                    return Err(self.fault(ctx, lane, "binarySearchBefore", format!("window [{lo}, {hi}) invalid")));
                }
                let (lo, hi) = (lo as usize, hi as usize);
                *extra = (*extra).max(search_cost(hi - lo));
                let mut p = lo;
                if hi > lo {
                    let (mut a, mut b) = (lo, hi);
                    while b - a > 1 {
                        let m = a + (b - a) / 2;
                        if pos[m] <= t {
                            a = m;
                        } else {
                            b = m;
                        }
                    }
                    p = a;
                }
                Value::I(p as i64)
            }
        })
    }

    fn charge(&self, w: &mut Warp, cost: u64, mask: Mask) -> Result<(), SimError> {
        w.steps += cost;
        w.idle += cost * (WARP_SIZE as u64 - mask.count_ones() as u64);
        if w.steps > STEP_LIMIT {
            return Err(SimError::Program("step limit exceeded".into()));
        }
        Ok(())
    }

    /// Evaluates `e` on every lane of `mask`, charging one step plus any
    /// search cost.
    fn eval_all(&self, ctx: &Ctx<'_, '_>, w: &mut Warp, mask: Mask, e: &CExpr) -> Result<[Value; WARP_SIZE], SimError> {
        let mut out = [Value::I(0); WARP_SIZE];
        let mut extra = 0;
        for lane in lanes(mask) {
            out[lane] = self.eval(ctx, w, lane, e, &mut extra)?;
        }
        self.charge(w, 1 + extra, mask)?;
        Ok(out)
    }

    /// Runs `nodes` under `mask`; returns the lanes that executed `break`.
    fn exec(&self, ctx: &mut Ctx<'_, '_>, w: &mut Warp, nodes: &[CNode], mut mask: Mask) -> Result<Mask, SimError> {
        let mut broke: Mask = 0;
        for n in nodes {
            if mask == 0 {
                break;
            }
            match n {
                CNode::Break => {
                    self.charge(w, 1, mask)?;
                    broke |= mask;
                    mask = 0;
                }
                CNode::Set { slot, value, real } => {
                    let vals = self.eval_all(ctx, w, mask, value)?;
                    for lane in lanes(mask) {
                        let v = match (vals[lane], real) {
                            (Value::R(x), _) => Value::R(self.round(x)),
                            (Value::I(x), true) => Value::R(x as f64),
                            (v, false) => v,
                        };
                        w.regs[lane * w.slots + slot] = v;
                    }
                }
                CNode::If { cond, then, els, zero_ext } => {
                    let c = self.eval_all(ctx, w, mask, cond)?;
                    let t: Mask = lanes(mask).filter(|&l| c[l].int() != 0).fold(0, |m, l| m | 1 << l);
                    let f = mask & !t;
                    let mut b = 0;
                    if t != 0 {
                        b |= self.exec(ctx, w, then, t)?;
                        if *zero_ext {
                            w.filler |= t;
                        }
                    }
                    if f != 0 && !els.is_empty() {
                        b |= self.exec(ctx, w, els, f)?;
                    }
                    broke |= b;
                    mask &= !b;
                }
                CNode::For { slot, begin, end, step, body } => {
                    let b = self.eval_all(ctx, w, mask, begin)?;
                    for lane in lanes(mask) {
                        w.regs[lane * w.slots + slot] = Value::I(b[lane].int());
                    }
                    let mut active = mask;
                    loop {
                        let e = self.eval_all(ctx, w, active, end)?;
                        active = lanes(active)
                            .filter(|&l| w.regs[l * w.slots + slot].int() < e[l].int())
                            .fold(0, |m, l| m | 1 << l);
                        if active == 0 {
                            break;
                        }
                        let b = self.exec(ctx, w, body, active)?;
                        active &= !b;
                        for lane in lanes(active) {
                            let r = &mut w.regs[lane * w.slots + slot];
                            *r = Value::I(r.int() + step);
                        }
                    }
                }
                CNode::While { cond, body } => {
                    let mut active = mask;
                    loop {
                        let c = self.eval_all(ctx, w, active, cond)?;
                        active = lanes(active).filter(|&l| c[l].int() != 0).fold(0, |m, l| m | 1 << l);
                        if active == 0 {
                            break;
                        }
                        let b = self.exec(ctx, w, body, active)?;
                        active &= !b;
                    }
                }
                CNode::Store { index, value } | CNode::Atomic { index, value } => {
                    let mut extra = 0;
                    let mut writes = Vec::new();
                    for lane in lanes(mask) {
                        let i = self.eval(ctx, w, lane, index, &mut extra)?.int();
                        let v = self.eval(ctx, w, lane, value, &mut extra)?.real();
                        if i < 0 || i as usize >= ctx.out.len() {
                            return Err(self.fault(ctx, lane, "C_vals", format!("index {i} out of bounds")));
                        }
                        writes.push((i as usize, v));
                    }
                    self.charge(w, 1 + extra, mask)?;
                    let atomic = matches!(n, CNode::Atomic { .. });
                    for (i, v) in writes {
                        let v = self.round(v);
                        if atomic {
                            w.atomics += 1;
                            ctx.out.write(i, Write::Add(v), |x| self.round(x));
                        } else {
                            ctx.out.write(i, Write::Set(v), |x| x);
                        }
                    }
                }
                CNode::Macro { kind, group, index, value } => {
                    let mut extra = 0;
                    let mut idx = [0usize; WARP_SIZE];
                    let mut val = [0f64; WARP_SIZE];
                    for lane in lanes(mask) {
                        let i = self.eval(ctx, w, lane, index, &mut extra)?.int();
                        if i < 0 || i as usize >= ctx.out.len() {
                            return Err(self.fault(ctx, lane, kind.name(), format!("index {i} out of bounds")));
                        }
                        idx[lane] = i as usize;
                        val[lane] = self.eval(ctx, w, lane, value, &mut extra)?.real();
                    }
                    let cost = group.trailing_zeros() as u64 + 1 + extra;
                    self.charge(w, cost, mask)?;
                    w.idle += cost * (w.filler & mask).count_ones() as u64;
                    w.filler &= !mask;
                    let active: Vec<bool> = (0..WARP_SIZE).map(|l| mask >> l & 1 == 1).collect();
                    for g0 in (0..WARP_SIZE).step_by(*group) {
                        let r = g0..g0 + group;
                        let plan = match kind {
                            MacroKind::AtomicAddGroup => parallel_plan(&active[r.clone()], &idx[r.clone()], &val[r]),
                            MacroKind::SegReduceGroup => segment_plan(&active[r.clone()], &idx[r.clone()], &val[r]),
                        }
                        .map_err(|e| self.fault(ctx, g0, kind.name(), e.to_string()))?;
                        for (i, v) in plan {
                            w.atomics += 1;
                            ctx.out.write(i, Write::Add(self.round(v)), |x| self.round(x));
                        }
                    }
                }
            }
        }
        Ok(broke)
    }

    /// Runs one block, returning its counters.
    pub fn run_block(
        &self,
        block: usize,
        block_size: usize,
        active_lanes: usize,
        out: &mut COut<'_>,
    ) -> Result<BlockStats, SimError> {
        let mut stats = BlockStats::default();
        for warp in 0..block_size / WARP_SIZE {
            let lane_base = warp * WARP_SIZE;
            let live = active_lanes.saturating_sub(lane_base).min(WARP_SIZE);
            let mask: Mask = if live == WARP_SIZE { u32::MAX } else { (1u32 << live) - 1 };
            let mut w = Warp {
                regs: vec![Value::I(0); WARP_SIZE * self.prog.slots.max(1)],
                slots: self.prog.slots.max(1),
                filler: 0,
                steps: 0,
                idle: 0,
                atomics: 0,
            };
            let mut ctx = Ctx { block, warp, lane_base, out };
            if mask != 0 {
                self.exec(&mut ctx, &mut w, &self.prog.body, mask)?;
            }
            stats.warp_steps.push(w.steps);
            stats.atomic_ops += w.atomics;
            stats.idle_lane_steps += w.idle;
        }
        Ok(stats)
    }
}

fn lanes(mask: Mask) -> impl Iterator<Item = usize> {
    (0..WARP_SIZE).filter(move |l| mask >> l & 1 == 1)
}

fn bin(op: BinOp, x: Value, y: Value) -> Option<Value> {
    use Value::{I, R};
    let b = |v: bool| I(v as i64);
    Some(match (x, y) {
        (I(a), I(c)) => match op {
            BinOp::Add => I(a + c),
            BinOp::Sub => I(a - c),
            BinOp::Mul => I(a * c),
            BinOp::Div => I(a.checked_div_euclid(c)?),
            BinOp::Rem => I(a.checked_rem_euclid(c)?),
            BinOp::Min => I(a.min(c)),
            BinOp::Lt => b(a < c),
            BinOp::Le => b(a <= c),
            BinOp::Gt => b(a > c),
            BinOp::Ge => b(a >= c),
            BinOp::Eq => b(a == c),
            BinOp::Ne => b(a != c),
            BinOp::And => b(a != 0 && c != 0),
        },
        _ => {
            let (a, c) = (x.real(), y.real());
            match op {
                BinOp::Add => R(a + c),
                BinOp::Sub => R(a - c),
                BinOp::Mul => R(a * c),
                BinOp::Div => R(a / c),
                BinOp::Rem => R(a % c),
                BinOp::Min => R(a.min(c)),
                BinOp::Lt => b(a < c),
                BinOp::Le => b(a <= c),
                BinOp::Gt => b(a > c),
                BinOp::Ge => b(a >= c),
                BinOp::Eq => b(a == c),
                BinOp::Ne => b(a != c),
                BinOp::And => b(a != 0.0 && c != 0.0),
            }
        }
    })
}
