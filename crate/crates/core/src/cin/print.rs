use std::fmt;

use super::{
    Access, AssignOp, BoundType, CinStmt, Expr, LValue, OutputRace, ParallelAnnotation, ParallelUnit,
    ReductionStrategy, Relation,
};

impl fmt::Display for Access {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}(", self.tensor)?;
        for (n, v) in self.indices.iter().enumerate() {
            if n > 0 {
                f.write_str(",")?;
            }
            write!(f, "{v}")?;
        }
        f.write_str(")")
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Access(a) => write!(f, "{a}"),
            Expr::Workspace(w) => f.write_str(w),
            Expr::Mul(a, b) => write!(f, "{a}*{b}"),
        }
    }
}

impl fmt::Display for LValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LValue::Access(a) => write!(f, "{a}"),
            LValue::Workspace(w) => f.write_str(w),
        }
    }
}

impl fmt::Display for ParallelUnit {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

impl fmt::Display for OutputRace {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

impl fmt::Display for ParallelAnnotation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.group {
            None => write!(f, "{},{}", self.unit, self.race),
            Some(g) => {
                let strategy = match g.strategy {
                    ReductionStrategy::Parallel => "Atomics",
                    ReductionStrategy::Segment => "Segment",
                };
                write!(f, "{},{},{}", self.unit, g.size, strategy)
            }
        }
    }
}

impl fmt::Display for Relation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Relation::Fuse { outer, inner, fused } => write!(f, "fuse({outer},{inner},{fused})"),
            Relation::Pos { var, pos_var, access } => write!(f, "pos({var},{pos_var},{access})"),
            Relation::Split { parent, outer, inner, factor } => {
                write!(f, "split({parent},{outer},{inner},{factor})")
            }
            Relation::Bound { parent, bounded, extent, kind } => {
                let kind = match kind {
                    BoundType::MaxExact => "MaxExact",
                };
                write!(f, "bound({parent},{bounded},{extent},{kind})")
            }
            Relation::Parallelize { var, annotation } => write!(f, "parallelize({var},{annotation})"),
        }
    }
}

impl fmt::Display for CinStmt {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CinStmt::Forall { var, body, annotation } => match annotation {
                Some(a) => write!(f, "forall({var},{body},{a})"),
                None => write!(f, "forall({var},{body})"),
            },
            CinStmt::Where { consumer, producer } => write!(f, "where({consumer},{producer})"),
            CinStmt::Assign { lhs, op, rhs } => {
                let op = match op {
                    AssignOp::Set => "=",
                    AssignOp::Add => "+=",
                };
                write!(f, "{lhs}{op}{rhs}")
            }
            CinStmt::SuchThat { body, relations } => {
                write!(f, "suchthat({body},")?;
                for (n, r) in relations.iter().enumerate() {
                    if n > 0 {
                        f.write_str(" and ")?;
                    }
                    write!(f, "{r}")?;
                }
                f.write_str(")")
            }
        }
    }
}

/// Canonical comparison form of CIN text: whitespace removed, and
/// parentheses that wrap an entire argument dropped.
pub fn normalize_text(text: &str) -> String {
    let chars: Vec<char> = text.chars().filter(|c| !c.is_whitespace()).collect();
    let mut drop = vec![false; chars.len()];
    let mut stack: Vec<(usize, bool)> = Vec::new();
    for (n, &c) in chars.iter().enumerate() {
        match c {
            '(' => {
                let starts_arg = n > 0 && matches!(chars[n - 1], '(' | ',');
                stack.push((n, starts_arg));
            }
            ')' => {
                if let Some((open, starts_arg)) = stack.pop() {
                    let ends_arg = matches!(chars.get(n + 1), Some(',') | Some(')'));
                    if starts_arg && ends_arg {
                        drop[open] = true;
                        drop[n] = true;
                    }
                }
            }
            _ => {}
        }
    }
    chars.iter().zip(drop).filter(|(_, d)| !d).map(|(c, _)| *c).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normalize_strips_argument_parens_only() {
        assert_eq!(normalize_text("split(fpos, block,fpos1,(p*g/(N/c)))"), "split(fpos,block,fpos1,p*g/(N/c))");
        assert_eq!(normalize_text("split (k,ko,ki,c)"), "split(k,ko,ki,c)");
    }

    #[test]
    fn prints_unscheduled_spmm() {
        assert_eq!(CinStmt::spmm().to_string(), "forall(i,forall(j,forall(k,C(i,k)+=A(i,j)*B(j,k))))");
    }
}
