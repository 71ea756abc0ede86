use super::{
    Access, AssignOp, BoundType, CinError, CinStmt, Expr, IndexVar, LValue, OutputRace, ParallelAnnotation,
    ParallelUnit, Param, ReductionStrategy, Relation, SizeExpr, SizeOp,
};

#[derive(Clone, Debug, PartialEq)]
enum Tok {
    Ident(String),
    Int(i64),
    LParen,
    RParen,
    Comma,
    Star,
    Slash,
    Plus,
    Minus,
    Assign,
    AddAssign,
    Eof,
}

struct Token {
    tok: Tok,
    line: usize,
    col: usize,
}

fn lex(text: &str) -> Result<Vec<Token>, CinError> {
    let mut out = Vec::new();
    let chars: Vec<char> = text.chars().collect();
    let (mut line, mut col) = (1, 1);
    let mut n = 0;
    while n < chars.len() {
        let c = chars[n];
        let (tl, tc) = (line, col);
        if c == '\n' {
            line += 1;
            col = 1;
            n += 1;
            continue;
        }
        if c.is_whitespace() {
            col += 1;
            n += 1;
            continue;
        }
        let mut len = 1;
        let tok = match c {
            '(' => Tok::LParen,
            ')' => Tok::RParen,
            ',' => Tok::Comma,
            '*' => Tok::Star,
            '/' => Tok::Slash,
            '-' => Tok::Minus,
            '=' => Tok::Assign,
            '+' if chars.get(n + 1) == Some(&'=') => {
                len = 2;
                Tok::AddAssign
            }
            '+' => Tok::Plus,
            c if c.is_ascii_digit() => {
                while chars.get(n + len).is_some_and(|d| d.is_ascii_digit()) {
                    len += 1;
                }
                let s: String = chars[n..n + len].iter().collect();
                let v = s.parse().map_err(|_| CinError::Syntax {
                    line: tl,
                    col: tc,
                    msg: format!("integer '{s}' out of range"),
                })?;
                Tok::Int(v)
            }
            c if c.is_ascii_alphabetic() || c == '_' => {
                while chars.get(n + len).is_some_and(|d| d.is_ascii_alphanumeric() || *d == '_') {
                    len += 1;
                }
                Tok::Ident(chars[n..n + len].iter().collect())
            }
            other => {
                return Err(CinError::Syntax { line: tl, col: tc, msg: format!("unexpected character '{other}'") })
            }
        };
        out.push(Token { tok, line: tl, col: tc });
        n += len;
        col += len;
    }
    out.push(Token { tok: Tok::Eof, line, col });
    Ok(out)
}

struct Parser {
    toks: Vec<Token>,
    pos: usize,
}

impl Parser {
    fn peek(&self) -> &Tok {
        &self.toks[self.pos].tok
    }

    fn peek_at(&self, k: usize) -> &Tok {
        &self.toks[(self.pos + k).min(self.toks.len() - 1)].tok
    }

    fn err<T>(&self, msg: impl Into<String>) -> Result<T, CinError> {
        let t = &self.toks[self.pos];
        Err(CinError::Syntax { line: t.line, col: t.col, msg: msg.into() })
    }

    fn bump(&mut self) -> Tok {
        let t = self.toks[self.pos].tok.clone();
        if self.pos + 1 < self.toks.len() {
            self.pos += 1;
        }
        t
    }

    fn expect(&mut self, want: Tok, what: &str) -> Result<(), CinError> {
        if *self.peek() == want {
            self.bump();
            Ok(())
        } else {
            self.err(format!("expected {what}, found {:?}", self.peek()))
        }
    }

    fn ident(&mut self) -> Result<String, CinError> {
        match self.peek().clone() {
            Tok::Ident(s) => {
                self.bump();
                Ok(s)
            }
            other => self.err(format!("expected identifier, found {other:?}")),
        }
    }

    fn keyword(&mut self, kw: &str) -> Result<(), CinError> {
        match self.peek() {
            Tok::Ident(s) if s == kw => {
                self.bump();
                Ok(())
            }
            other => self.err(format!("expected '{kw}', found {other:?}")),
        }
    }

    fn stmt(&mut self) -> Result<CinStmt, CinError> {
        let is_call = *self.peek_at(1) == Tok::LParen;
        let head = match self.peek() {
            Tok::Ident(s) => s.clone(),
            other => return self.err(format!("expected statement, found {other:?}")),
        };
        match head.as_str() {
            "suchthat" if is_call => self.suchthat(),
            "forall" if is_call => self.forall(),
            "where" if is_call => {
                self.bump();
                self.bump();
                let consumer = self.stmt()?;
                self.expect(Tok::Comma, "','")?;
                let producer = self.stmt()?;
                self.expect(Tok::RParen, "')'")?;
                Ok(CinStmt::Where { consumer: Box::new(consumer), producer: Box::new(producer) })
            }
            _ => self.assign(),
        }
    }

    fn suchthat(&mut self) -> Result<CinStmt, CinError> {
        self.bump();
        self.bump();
        let body = self.stmt()?;
        self.expect(Tok::Comma, "','")?;
        let mut relations = vec![self.relation()?];
        loop {
            match self.peek() {
                Tok::Comma => {
                    self.bump();
                }
                Tok::Ident(s) if s == "and" => {
                    self.bump();
                }
                _ => break,
            }
            relations.push(self.relation()?);
        }
        self.expect(Tok::RParen, "')' closing suchthat")?;
        Ok(CinStmt::SuchThat { body: Box::new(body), relations })
    }

    fn forall(&mut self) -> Result<CinStmt, CinError> {
        self.bump();
        self.bump();
        let var = IndexVar(self.ident()?);
        self.expect(Tok::Comma, "','")?;
        let body = self.stmt()?;
        let annotation = if *self.peek() == Tok::Comma {
            self.bump();
            Some(self.annotation()?)
        } else {
            None
        };
        self.expect(Tok::RParen, "')' closing forall")?;
        Ok(CinStmt::Forall { var, body: Box::new(body), annotation })
    }

    /// `Unit,Race` or `GPUGroup,size,Strategy`.
    fn annotation(&mut self) -> Result<ParallelAnnotation, CinError> {
        let unit = match self.ident()?.as_str() {
            "GPUBlock" => ParallelUnit::GPUBlock,
            "GPUWarp" => ParallelUnit::GPUWarp,
            "GPUThread" => ParallelUnit::GPUThread,
            "GPUGroup" => ParallelUnit::GPUGroup,
            other => return self.err(format!("unknown parallel unit '{other}'")),
        };
        self.expect(Tok::Comma, "','")?;
        if unit == ParallelUnit::GPUGroup {
            let size = self.size()?;
            self.expect(Tok::Comma, "','")?;
            let strategy = match self.ident()?.as_str() {
                "Atomics" | "Parallel" => ReductionStrategy::Parallel,
                "Segment" => ReductionStrategy::Segment,
                other => return self.err(format!("unknown reduction strategy '{other}'")),
            };
            return Ok(ParallelAnnotation::group(strategy, size));
        }
        let race = match self.ident()?.as_str() {
            "NoRaces" => OutputRace::NoRaces,
            "IgnoreRaces" => OutputRace::IgnoreRaces,
            "Atomics" => OutputRace::Atomics,
            "ParallelReduction" => OutputRace::ParallelReduction,
            other => return self.err(format!("unknown race strategy '{other}'")),
        };
        Ok(ParallelAnnotation::hardware(unit, race))
    }

    fn relation(&mut self) -> Result<Relation, CinError> {
        let name = self.ident()?;
        self.expect(Tok::LParen, "'('")?;
        let rel = match name.as_str() {
            "fuse" => {
                let outer = IndexVar(self.ident()?);
                self.expect(Tok::Comma, "','")?;
                let inner = IndexVar(self.ident()?);
                self.expect(Tok::Comma, "','")?;
                let fused = IndexVar(self.ident()?);
                Relation::Fuse { outer, inner, fused }
            }
            "pos" => {
                let var = IndexVar(self.ident()?);
                self.expect(Tok::Comma, "','")?;
                let pos_var = IndexVar(self.ident()?);
                self.expect(Tok::Comma, "','")?;
                let tensor = self.ident()?;
                let access = self.access_tail(tensor)?;
                Relation::Pos { var, pos_var, access }
            }
            "split" => {
                let parent = IndexVar(self.ident()?);
                self.expect(Tok::Comma, "','")?;
                let outer = IndexVar(self.ident()?);
                self.expect(Tok::Comma, "','")?;
                let inner = IndexVar(self.ident()?);
                self.expect(Tok::Comma, "','")?;
                let factor = self.size()?;
                Relation::Split { parent, outer, inner, factor }
            }
            "bound" => {
                let parent = IndexVar(self.ident()?);
                self.expect(Tok::Comma, "','")?;
                let bounded = IndexVar(self.ident()?);
                self.expect(Tok::Comma, "','")?;
                let extent = self.size()?;
                self.expect(Tok::Comma, "','")?;
                self.keyword("MaxExact")?;
                Relation::Bound { parent, bounded, extent, kind: BoundType::MaxExact }
            }
            "parallelize" => {
                let var = IndexVar(self.ident()?);
                self.expect(Tok::Comma, "','")?;
                let annotation = self.annotation()?;
                Relation::Parallelize { var, annotation }
            }
            other => return self.err(format!("unknown relation '{other}'")),
        };
        self.expect(Tok::RParen, "')' closing relation")?;
        Ok(rel)
    }

    fn access_tail(&mut self, tensor: String) -> Result<Access, CinError> {
        self.expect(Tok::LParen, "'('")?;
        let mut indices = vec![IndexVar(self.ident()?)];
        while *self.peek() == Tok::Comma {
            self.bump();
            indices.push(IndexVar(self.ident()?));
        }
        self.expect(Tok::RParen, "')'")?;
        Ok(Access { tensor, indices })
    }

    fn assign(&mut self) -> Result<CinStmt, CinError> {
        let name = self.ident()?;
        let lhs =
            if *self.peek() == Tok::LParen { LValue::Access(self.access_tail(name)?) } else { LValue::Workspace(name) };
        let op = match self.bump() {
            Tok::Assign => AssignOp::Set,
            Tok::AddAssign => AssignOp::Add,
            other => {
                self.pos -= 1;
                return self.err(format!("expected '=' or '+=', found {other:?}"));
            }
        };
        let mut rhs = self.factor()?;
        while *self.peek() == Tok::Star {
            self.bump();
            rhs = Expr::Mul(Box::new(rhs), Box::new(self.factor()?));
        }
        Ok(CinStmt::Assign { lhs, op, rhs })
    }

    fn factor(&mut self) -> Result<Expr, CinError> {
        let name = match self.peek().clone() {
            Tok::Ident(s) => s,
            other => return self.err(format!("expected operand, found {other:?}")),
        };
        self.bump();
        if *self.peek() == Tok::LParen {
            Ok(Expr::Access(self.access_tail(name)?))
        } else {
            Ok(Expr::Workspace(name))
        }
    }

    fn size(&mut self) -> Result<SizeExpr, CinError> {
        let mut e = self.size_term()?;
        loop {
            let op = match self.peek() {
                Tok::Plus => SizeOp::Add,
                Tok::Minus => SizeOp::Sub,
                _ => return Ok(e),
            };
            self.bump();
            e = SizeExpr::bin(op, e, self.size_term()?);
        }
    }

    fn size_term(&mut self) -> Result<SizeExpr, CinError> {
        let mut e = self.size_atom()?;
        loop {
            let op = match self.peek() {
                Tok::Star => SizeOp::Mul,
                Tok::Slash => SizeOp::Div,
                _ => return Ok(e),
            };
            self.bump();
            e = SizeExpr::bin(op, e, self.size_atom()?);
        }
    }

    fn size_atom(&mut self) -> Result<SizeExpr, CinError> {
        match self.peek().clone() {
            Tok::Int(v) => {
                self.bump();
                Ok(SizeExpr::Lit(v))
            }
            Tok::Ident(s) => match Param::from_name(&s) {
                Some(p) => {
                    self.bump();
                    Ok(SizeExpr::Param(p))
                }
                None => self.err(format!("unknown size parameter '{s}'")),
            },
            Tok::LParen => {
                self.bump();
                let e = self.size()?;
                self.expect(Tok::RParen, "')'")?;
                Ok(e)
            }
            other => self.err(format!("expected size expression, found {other:?}")),
        }
    }
}

/// Parses the textual CIN form (`suchthat`, `forall`, `where`, relations
/// joined by `and`). Every index variable used by a tensor access must be
/// bound by a forall or mentioned by a relation.
pub fn parse_cin(text: &str) -> Result<CinStmt, CinError> {
    let mut p = Parser { toks: lex(text)?, pos: 0 };
    let stmt = p.stmt()?;
    if *p.peek() != Tok::Eof {
        return p.err(format!("unexpected trailing {:?}", p.peek()));
    }
    let defined = stmt.defined_vars();
    for a in stmt.accesses() {
        if let Some(v) = a.indices.iter().find(|v| !defined.contains(v.name())) {
            return Err(CinError::Unbound(v.0.clone()));
        }
    }
    Ok(stmt)
}
