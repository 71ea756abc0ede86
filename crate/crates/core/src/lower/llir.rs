use std::fmt;

/// Global arrays a kernel can touch.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Array {
    APos,
    ACrd,
    AVals,
    BVals,
    CVals,
    BlockStarts,
}

impl Array {
    pub fn name(self) -> &'static str {
        match self {
            Array::APos => "A2_pos",
            Array::ACrd => "A2_crd",
            Array::AVals => "A_vals",
            Array::BVals => "B_vals",
            Array::CVals => "C_vals",
            Array::BlockStarts => "i_blockStarts",
        }
    }

    pub fn is_real(self) -> bool {
        matches!(self, Array::AVals | Array::BVals | Array::CVals)
    }
}

/// Tensor dimensions known at launch.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Dim {
    /// rows of A
    A1,
    /// columns of A
    A2,
    /// columns of B
    B2,
    /// columns of C
    C2,
}

impl Dim {
    pub fn name(self) -> &'static str {
        match self {
            Dim::A1 => "A1_dimension",
            Dim::A2 => "A2_dimension",
            Dim::B2 => "B2_dimension",
            Dim::C2 => "C2_dimension",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
    Rem,
    Min,
    Lt,
    Le,
    Gt,
    Ge,
    Eq,
    Ne,
    And,
}

impl BinOp {
    fn prec(self) -> u8 {
        match self {
            BinOp::Min => 10,
            BinOp::Mul | BinOp::Div | BinOp::Rem => 5,
            BinOp::Add | BinOp::Sub => 4,
            BinOp::Lt | BinOp::Le | BinOp::Gt | BinOp::Ge => 3,
            BinOp::Eq | BinOp::Ne => 2,
            BinOp::And => 1,
        }
    }

    fn symbol(self) -> &'static str {
        match self {
            BinOp::Add => "+",
            BinOp::Sub => "-",
            BinOp::Mul => "*",
            BinOp::Div => "/",
            BinOp::Rem => "%",
            BinOp::Min => "min",
            BinOp::Lt => "<",
            BinOp::Le => "<=",
            BinOp::Gt => ">",
            BinOp::Ge => ">=",
            BinOp::Eq => "==",
            BinOp::Ne => "!=",
            BinOp::And => "&&",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum LExpr {
    Int(i64),
    Real(f64),
    Var(String),
    BlockIdx,
    ThreadIdx,
    Dim(Dim),
    Load(Array, Box<LExpr>),
    Bin(BinOp, Box<LExpr>, Box<LExpr>),
    Not(Box<LExpr>),
    /// Largest `p` in `[lo, hi)` with `array[p] <= target`.
    BinarySearchBefore {
        array: Array,
        lo: Box<LExpr>,
        hi: Box<LExpr>,
        target: Box<LExpr>,
    },
}

#[allow(clippy::should_implement_trait)]
impl LExpr {
    pub fn var(name: &str) -> LExpr {
        LExpr::Var(name.to_string())
    }

    pub fn load(array: Array, index: LExpr) -> LExpr {
        LExpr::Load(array, Box::new(index))
    }

    /// Builds a binary node, folding integer constants and the identities
    /// `x+0`, `x*1`, `x*0`, `x/1`.
    pub fn bin(op: BinOp, a: LExpr, b: LExpr) -> LExpr {
        use LExpr::Int;
        match (op, &a, &b) {
            (BinOp::Add, Int(x), Int(y)) => Int(x + y),
            (BinOp::Sub, Int(x), Int(y)) => Int(x - y),
            (BinOp::Mul, Int(x), Int(y)) => Int(x * y),
            (BinOp::Div, Int(x), Int(y)) if *y != 0 => Int(x.div_euclid(*y)),
            (BinOp::Rem, Int(x), Int(y)) if *y != 0 => Int(x.rem_euclid(*y)),
            (BinOp::Min, Int(x), Int(y)) => Int(*x.min(y)),
            (BinOp::Add, _, Int(0)) | (BinOp::Sub, _, Int(0)) | (BinOp::Mul, _, Int(1)) | (BinOp::Div, _, Int(1)) => a,
            (BinOp::Add, Int(0), _) | (BinOp::Mul, Int(1), _) => b,
            (BinOp::Mul, Int(0), _) | (BinOp::Mul, _, Int(0)) => Int(0),
            (BinOp::Rem, _, Int(1)) => Int(0),
            _ => LExpr::Bin(op, Box::new(a), Box::new(b)),
        }
    }

    pub fn add(a: LExpr, b: LExpr) -> LExpr {
        LExpr::bin(BinOp::Add, a, b)
    }

    pub fn sub(a: LExpr, b: LExpr) -> LExpr {
        LExpr::bin(BinOp::Sub, a, b)
    }

    pub fn mul(a: LExpr, b: LExpr) -> LExpr {
        LExpr::bin(BinOp::Mul, a, b)
    }

    pub fn div(a: LExpr, b: LExpr) -> LExpr {
        LExpr::bin(BinOp::Div, a, b)
    }

    pub fn rem(a: LExpr, b: LExpr) -> LExpr {
        LExpr::bin(BinOp::Rem, a, b)
    }

    /// `ceil(a / b)` for positive `b`.
    pub fn ceil_div(a: LExpr, b: LExpr) -> LExpr {
        LExpr::div(LExpr::add(a, LExpr::sub(b.clone(), LExpr::Int(1))), b)
    }

    pub fn as_int(&self) -> Option<i64> {
        match self {
            LExpr::Int(v) => Some(*v),
            _ => None,
        }
    }

    /// Replaces variable `name` by `with`, refolding constants.
    pub fn substitute(&self, name: &str, with: &LExpr) -> LExpr {
        let sub = |e: &LExpr| e.substitute(name, with);
        match self {
            LExpr::Var(v) if v == name => with.clone(),
            LExpr::Load(a, i) => LExpr::load(*a, sub(i)),
            LExpr::Bin(op, a, b) => LExpr::bin(*op, sub(a), sub(b)),
            LExpr::Not(e) => LExpr::Not(Box::new(sub(e))),
            LExpr::BinarySearchBefore { array, lo, hi, target } => LExpr::BinarySearchBefore {
                array: *array,
                lo: Box::new(sub(lo)),
                hi: Box::new(sub(hi)),
                target: Box::new(sub(target)),
            },
            other => other.clone(),
        }
    }

    /// Names of all variables read.
    pub fn vars(&self, out: &mut Vec<String>) {
        match self {
            LExpr::Var(v) => out.push(v.clone()),
            LExpr::Load(_, i) | LExpr::Not(i) => i.vars(out),
            LExpr::Bin(_, a, b) => {
                a.vars(out);
                b.vars(out);
            }
            LExpr::BinarySearchBefore { lo, hi, target, .. } => {
                lo.vars(out);
                hi.vars(out);
                target.vars(out);
            }
            _ => {}
        }
    }

    fn fmt_prec(&self, f: &mut fmt::Formatter<'_>, parent: u8, right: bool) -> fmt::Result {
        match self {
            LExpr::Int(v) => write!(f, "{v}"),
            LExpr::Real(v) => write!(f, "{v:?}"),
            LExpr::Var(v) => f.write_str(v),
            LExpr::BlockIdx => f.write_str("blockIdx.x"),
            LExpr::ThreadIdx => f.write_str("threadIdx.x"),
            LExpr::Dim(d) => f.write_str(d.name()),
            LExpr::Load(a, i) => write!(f, "{}[{i}]", a.name()),
            LExpr::Not(e) => {
                f.write_str("!(")?;
                e.fmt_prec(f, 0, false)?;
                f.write_str(")")
            }
            LExpr::Bin(BinOp::Min, a, b) => write!(f, "min({a}, {b})"),
            LExpr::Bin(op, a, b) => {
                let prec = op.prec();
                let paren = prec < parent || (right && prec == parent);
                if paren {
                    f.write_str("(")?;
                }
                a.fmt_prec(f, prec, false)?;
                write!(f, " {} ", op.symbol())?;
                b.fmt_prec(f, prec, true)?;
                if paren {
                    f.write_str(")")?;
                }
                Ok(())
            }
            LExpr::BinarySearchBefore { array, lo, hi, target } => {
                write!(f, "binarySearchBefore({}, {lo}, {hi}, {target})", array.name())
            }
        }
    }
}

impl fmt::Display for LExpr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.fmt_prec(f, 0, false)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Ty {
    Int,
    Real,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum IfKind {
    Plain,
    /// Out-of-range lanes take the `then` arm with a zero value and stay
    /// active for the following group reduction.
    ZeroExtension,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum MacroKind {
    AtomicAddGroup,
    SegReduceGroup,
}

impl MacroKind {
    pub fn name(self) -> &'static str {
        match self {
            MacroKind::AtomicAddGroup => "atomicAddGroup",
            MacroKind::SegReduceGroup => "segReduceGroup",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum LlirNode {
    ForLoop { var: String, begin: LExpr, end: LExpr, step: i64, body: Vec<LlirNode> },
    WhileLoop { cond: LExpr, body: Vec<LlirNode> },
    If { cond: LExpr, then: Vec<LlirNode>, els: Option<Vec<LlirNode>>, kind: IfKind },
    VarDecl { name: String, ty: Ty, init: LExpr },
    Assign { name: String, value: LExpr },
    Store { array: Array, index: LExpr, value: LExpr },
    AtomicAdd { array: Array, index: LExpr, value: LExpr },
    Macro { kind: MacroKind, group_size: u32, array: Array, index: LExpr, value: LExpr },
    Break,
}

impl LlirNode {
    /// Visits this node and every nested node in program order.
    pub fn walk<'a>(&'a self, f: &mut dyn FnMut(&'a LlirNode)) {
        f(self);
        let children: Vec<&Vec<LlirNode>> = match self {
            LlirNode::ForLoop { body, .. } | LlirNode::WhileLoop { body, .. } => vec![body],
            LlirNode::If { then, els, .. } => std::iter::once(then).chain(els.as_ref()).collect(),
            _ => vec![],
        };
        for c in children.into_iter().flatten() {
            c.walk(f);
        }
    }

    fn dump(&self, out: &mut String, depth: usize) {
        let pad = "  ".repeat(depth);
        let block = |out: &mut String, body: &[LlirNode]| {
            for n in body {
                n.dump(out, depth + 1);
            }
        };
        match self {
            LlirNode::ForLoop { var, begin, end, step, body } => {
                out.push_str(&format!("{pad}for {var} in {begin} .. {end} step {step} {{\n"));
                block(out, body);
                out.push_str(&format!("{pad}}}\n"));
            }
            LlirNode::WhileLoop { cond, body } => {
                out.push_str(&format!("{pad}while {cond} {{\n"));
                block(out, body);
                out.push_str(&format!("{pad}}}\n"));
            }
            LlirNode::If { cond, then, els, kind } => {
                let tag = match kind {
                    IfKind::Plain => "if",
                    IfKind::ZeroExtension => "if[zero-ext]",
                };
                out.push_str(&format!("{pad}{tag} {cond} {{\n"));
                block(out, then);
                if let Some(e) = els {
                    out.push_str(&format!("{pad}}} else {{\n"));
                    block(out, e);
                }
                out.push_str(&format!("{pad}}}\n"));
            }
            LlirNode::VarDecl { name, ty, init } => {
                let ty = match ty {
                    Ty::Int => "int",
                    Ty::Real => "real",
                };
                out.push_str(&format!("{pad}decl {ty} {name} = {init}\n"));
            }
            LlirNode::Assign { name, value } => out.push_str(&format!("{pad}{name} = {value}\n")),
            LlirNode::Store { array, index, value } => {
                out.push_str(&format!("{pad}store {}[{index}] = {value}\n", array.name()))
            }
            LlirNode::AtomicAdd { array, index, value } => {
                out.push_str(&format!("{pad}atomic_add {}[{index}] += {value}\n", array.name()))
            }
            LlirNode::Macro { kind, group_size, array, index, value } => {
                out.push_str(&format!("{pad}macro {}<{group_size}>({}, {index}, {value})\n", kind.name(), array.name()))
            }
            LlirNode::Break => out.push_str(&format!("{pad}break\n")),
        }
    }
}

/// Stable text form of a node list, one statement per line.
pub fn dump_nodes(nodes: &[LlirNode]) -> String {
    let mut out = String::new();
    for n in nodes {
        n.dump(&mut out, 0);
    }
    out
}
