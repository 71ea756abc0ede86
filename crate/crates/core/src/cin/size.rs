use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Symbolic parameters that may appear in split factors and bounds.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Param {
    /// threads per block
    P,
    /// data amount (nnz or rows)
    G,
    /// dense columns per thread
    C,
    /// dense column count
    N,
    /// reduction group size
    R,
}

impl Param {
    pub fn name(self) -> &'static str {
        match self {
            Param::P => "p",
            Param::G => "g",
            Param::C => "c",
            Param::N => "N",
            Param::R => "r",
        }
    }

    pub fn from_name(s: &str) -> Option<Param> {
        Some(match s {
            "p" => Param::P,
            "g" => Param::G,
            "c" => Param::C,
            "N" => Param::N,
            "r" => Param::R,
            _ => return None,
        })
    }
}

/// Concrete values for every [`Param`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Params {
    pub p: i64,
    pub g: i64,
    pub c: i64,
    pub n: i64,
    pub r: i64,
}

impl Params {
    pub fn get(&self, p: Param) -> i64 {
        match p {
            Param::P => self.p,
            Param::G => self.g,
            Param::C => self.c,
            Param::N => self.n,
            Param::R => self.r,
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SizeError {
    #[error("'{expr}' is not an integer ({num} is not divisible by {den})")]
    NonInteger { expr: String, num: i64, den: i64 },
    #[error("division by zero in '{0}'")]
    DivByZero(String),
    #[error("parameter '{0}' has no value")]
    Unbound(&'static str),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum SizeOp {
    Add,
    Sub,
    Mul,
    Div,
}

impl SizeOp {
    fn prec(self) -> u8 {
        match self {
            SizeOp::Add | SizeOp::Sub => 1,
            SizeOp::Mul | SizeOp::Div => 2,
        }
    }

    fn symbol(self) -> char {
        match self {
            SizeOp::Add => '+',
            SizeOp::Sub => '-',
            SizeOp::Mul => '*',
            SizeOp::Div => '/',
        }
    }
}

/// Integer expression used for split factors, bound extents and group sizes.
/// Division must be exact when evaluated.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum SizeExpr {
    Lit(i64),
    Param(Param),
    Bin(SizeOp, Box<SizeExpr>, Box<SizeExpr>),
}

impl SizeExpr {
    pub fn bin(op: SizeOp, a: SizeExpr, b: SizeExpr) -> SizeExpr {
        SizeExpr::Bin(op, Box::new(a), Box::new(b))
    }

    pub fn is_literal(&self) -> bool {
        match self {
            SizeExpr::Lit(_) => true,
            SizeExpr::Param(_) => false,
            SizeExpr::Bin(_, a, b) => a.is_literal() && b.is_literal(),
        }
    }

    pub fn eval(&self, params: &Params) -> Result<i64, SizeError> {
        self.eval_with(&|p| Some(params.get(p)))
    }

    /// Evaluates an expression that contains no parameters.
    pub fn eval_literal(&self) -> Result<i64, SizeError> {
        self.eval_with(&|_| None)
    }

    fn eval_with(&self, lookup: &dyn Fn(Param) -> Option<i64>) -> Result<i64, SizeError> {
        match self {
            SizeExpr::Lit(v) => Ok(*v),
            SizeExpr::Param(p) => lookup(*p).ok_or(SizeError::Unbound(p.name())),
            SizeExpr::Bin(op, a, b) => {
                let (x, y) = (a.eval_with(lookup)?, b.eval_with(lookup)?);
                Ok(match op {
                    SizeOp::Add => x + y,
                    SizeOp::Sub => x - y,
                    SizeOp::Mul => x * y,
                    SizeOp::Div => {
                        if y == 0 {
                            return Err(SizeError::DivByZero(self.to_string()));
                        }
                        if x % y != 0 {
                            return Err(SizeError::NonInteger { expr: self.to_string(), num: x, den: y });
                        }
                        x / y
                    }
                })
            }
        }
    }

    /// Replaces every parameter by its literal value, keeping the
    /// arithmetic structure.
    pub fn substitute(&self, params: &Params) -> SizeExpr {
        match self {
            SizeExpr::Lit(v) => SizeExpr::Lit(*v),
            SizeExpr::Param(p) => SizeExpr::Lit(params.get(*p)),
            SizeExpr::Bin(op, a, b) => SizeExpr::bin(*op, a.substitute(params), b.substitute(params)),
        }
    }

    fn fmt_prec(&self, f: &mut fmt::Formatter<'_>, parent: u8, right: bool) -> fmt::Result {
        match self {
            SizeExpr::Lit(v) => write!(f, "{v}"),
            SizeExpr::Param(p) => f.write_str(p.name()),
            SizeExpr::Bin(op, a, b) => {
                let prec = op.prec();
                let paren = prec < parent || (right && prec == parent);
                if paren {
                    f.write_str("(")?;
                }
                a.fmt_prec(f, prec, false)?;
                write!(f, "{}", op.symbol())?;
                b.fmt_prec(f, prec, true)?;
                if paren {
                    f.write_str(")")?;
                }
                Ok(())
            }
        }
    }
}

impl fmt::Display for SizeExpr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.fmt_prec(f, 0, false)
    }
}

impl From<i64> for SizeExpr {
    fn from(v: i64) -> Self {
        SizeExpr::Lit(v)
    }
}
