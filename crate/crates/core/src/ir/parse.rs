//! Lexer and recursive-descent parser for the textual forelem DSL.
//!
//! ```text
//! program   := decl* stmt*
//! decl      := "reservoir" NAME "(" NAME ("," NAME)* ")" ";"
//!            | "data" NAME "(" NAME ")" ";"
//!            | "dense" NAME "[" dim ("," dim)* "]" ";"
//! stmt      := "for" "(" NAME "=" expr (".."|"downto") expr ")" block
//!            | "for" "(" NAME "=" expr ";" NAME cmp expr ";" NAME ("++"|"--") ")" block
//!            | "forelem" "(" NAME ";" NAME "in" subset ")" block
//!            | "if" "(" expr ")" block
//!            | NAME "=" NAME "∪" "(" expr ("," expr)* ")" ";"
//!            | ["int"|"double"] lvalue ("="|"+="|"-=") expr ";"
//! subset    := NAME | NAME "." NAME | NAME "." fieldtuple "[" valtuple "]"
//!            | "nat" "(" expr ")" | "span" "(" expr "," expr ")"
//! valtuple  := val | "(" val ("," val)* ")" ; val := expr | "(" expr "," ("inf"|expr) ")"
//! ```
//!
//! Loop bounds are written 1-based and inclusive, as in `for (i = 1 .. N)`;
//! they are stored 0-based and half-open.

use std::collections::HashMap;
use std::fmt;

use thiserror::Error;

use super::ast::*;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("{line}:{col}: {kind}")]
pub struct ParseError {
    pub line: usize,
    pub col: usize,
    pub kind: ParseErrorKind,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ParseErrorKind {
    Syntax(String),
    Unbound(String),
    Arity { fields: usize, values: usize },
}

impl fmt::Display for ParseErrorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ParseErrorKind::Syntax(m) => write!(f, "syntax error: {m}"),
            ParseErrorKind::Unbound(n) => write!(f, "unbound identifier `{n}`"),
            ParseErrorKind::Arity { fields, values } => write!(
                f,
                "condition arity mismatch: {fields} field(s), {values} value(s)"
            ),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Ident(String),
    Int(i64),
    Real(f64),
    Sym(&'static str),
    Eof,
}

#[derive(Debug, Clone)]
struct Token {
    tok: Tok,
    line: usize,
    col: usize,
}

const SYMBOLS: &[&str] = &[
    "..", "+=", "-=", "<=", ">=", "++", "--", "(", ")", "{", "}", "[", "]", ",", ";", ".", "=",
    "+", "-", "*", "/", "<", ">",
];

fn lex(src: &str) -> Result<Vec<Token>, ParseError> {
    let chars: Vec<char> = src.chars().collect();
    let mut out = Vec::new();
    let (mut i, mut line, mut col) = (0usize, 1usize, 1usize);
    let err = |line, col, m: String| ParseError {
        line,
        col,
        kind: ParseErrorKind::Syntax(m),
    };
    while i < chars.len() {
        let c = chars[i];
        if c == '\n' {
            line += 1;
            col = 1;
            i += 1;
            continue;
        }
        if c.is_whitespace() {
            i += 1;
            col += 1;
            continue;
        }
        if c == '#' || (c == '/' && chars.get(i + 1) == Some(&'/')) {
            while i < chars.len() && chars[i] != '\n' {
                i += 1;
            }
            continue;
        }
        let (tl, tc) = (line, col);
        if c.is_ascii_alphabetic() || c == '_' {
            let start = i;
            while i < chars.len() && (chars[i].is_ascii_alphanumeric() || chars[i] == '_') {
                i += 1;
            }
            let word: String = chars[start..i].iter().collect();
            col += i - start;
            out.push(Token {
                tok: Tok::Ident(word),
                line: tl,
                col: tc,
            });
            continue;
        }
        if c.is_ascii_digit() {
            let start = i;
            while i < chars.len() && chars[i].is_ascii_digit() {
                i += 1;
            }
            let mut real = false;
            // a '.' followed by a digit continues the number; `1..N` does not
            if i + 1 < chars.len() && chars[i] == '.' && chars[i + 1].is_ascii_digit() {
                real = true;
                i += 1;
                while i < chars.len() && chars[i].is_ascii_digit() {
                    i += 1;
                }
            }
            let text: String = chars[start..i].iter().collect();
            col += i - start;
            let tok = if real {
                Tok::Real(text.parse().map_err(|_| err(tl, tc, format!("bad number `{text}`")))?)
            } else {
                Tok::Int(text.parse().map_err(|_| err(tl, tc, format!("bad number `{text}`")))?)
            };
            out.push(Token {
                tok,
                line: tl,
                col: tc,
            });
            continue;
        }
        let unicode = match c {
            '∈' => Some(Tok::Ident("in".into())),
            '∞' => Some(Tok::Ident("inf".into())),
            '∪' => Some(Tok::Ident("union".into())),
            _ => None,
        };
        if let Some(tok) = unicode {
            out.push(Token {
                tok,
                line: tl,
                col: tc,
            });
            i += 1;
            col += 1;
            continue;
        }
        let rest: String = chars[i..chars.len().min(i + 2)].iter().collect();
        match SYMBOLS.iter().find(|s| rest.starts_with(**s)) {
            Some(s) => {
                out.push(Token {
                    tok: Tok::Sym(s),
                    line: tl,
                    col: tc,
                });
                i += s.len();
                col += s.len();
            }
            None => return Err(err(tl, tc, format!("unexpected character `{c}`"))),
        }
    }
    out.push(Token {
        tok: Tok::Eof,
        line,
        col,
    });
    Ok(out)
}

#[derive(Clone, Debug)]
enum Binding {
    Index,
    Tuple(String),
    Scalar,
}

struct Parser {
    toks: Vec<Token>,
    pos: usize,
    program: Program,
    scopes: Vec<HashMap<String, Binding>>,
}

/// Parses DSL text into a scope-checked [`Program`].
pub fn parse_program(src: &str) -> Result<Program, ParseError> {
    let mut p = Parser {
        toks: lex(src)?,
        pos: 0,
        program: Program::default(),
        scopes: vec![HashMap::new()],
    };
    p.program_()?;
    Ok(p.program)
}

type PResult<T> = Result<T, ParseError>;

impl Parser {
    fn peek(&self) -> &Tok {
        &self.toks[self.pos].tok
    }

    fn peek_at(&self, n: usize) -> &Tok {
        &self.toks[(self.pos + n).min(self.toks.len() - 1)].tok
    }

    fn here(&self) -> (usize, usize) {
        let t = &self.toks[self.pos];
        (t.line, t.col)
    }

    fn error<T>(&self, kind: ParseErrorKind) -> PResult<T> {
        let (line, col) = self.here();
        Err(ParseError { line, col, kind })
    }

    fn syntax<T>(&self, msg: impl Into<String>) -> PResult<T> {
        self.error(ParseErrorKind::Syntax(msg.into()))
    }

    fn bump(&mut self) -> Tok {
        let t = self.toks[self.pos].tok.clone();
        if self.pos < self.toks.len() - 1 {
            self.pos += 1;
        }
        t
    }

    fn is_sym(&self, s: &str) -> bool {
        matches!(self.peek(), Tok::Sym(x) if *x == s)
    }

    fn is_word(&self, w: &str) -> bool {
        matches!(self.peek(), Tok::Ident(x) if x == w)
    }

    fn eat_sym(&mut self, s: &str) -> bool {
        if self.is_sym(s) {
            self.bump();
            true
        } else {
            false
        }
    }

    fn expect_sym(&mut self, s: &str) -> PResult<()> {
        if self.eat_sym(s) {
            Ok(())
        } else {
            self.syntax(format!("expected `{s}`, found {}", describe(self.peek())))
        }
    }

    fn expect_word(&mut self, w: &str) -> PResult<()> {
        if self.is_word(w) {
            self.bump();
            Ok(())
        } else {
            self.syntax(format!("expected `{w}`, found {}", describe(self.peek())))
        }
    }

    fn name(&mut self) -> PResult<String> {
        match self.peek().clone() {
            Tok::Ident(n) => {
                self.bump();
                Ok(n)
            }
            other => self.syntax(format!("expected identifier, found {}", describe(&other))),
        }
    }

    fn lookup(&self, name: &str) -> Option<&Binding> {
        self.scopes.iter().rev().find_map(|s| s.get(name))
    }

    fn bind(&mut self, name: String, b: Binding) {
        self.scopes.last_mut().expect("scope").insert(name, b);
    }

    fn is_global_value(&self, name: &str) -> bool {
        self.program.size_params().iter().any(|p| p == name)
            || self.program.params.iter().any(|p| p == name)
    }

    fn program_(&mut self) -> PResult<()> {
        loop {
            if self.is_word("reservoir") {
                self.bump();
                let name = self.name()?;
                self.expect_sym("(")?;
                let mut fields = vec![FieldName::new(self.name()?)];
                while self.eat_sym(",") {
                    let f = FieldName::new(self.name()?);
                    if fields.contains(&f) {
                        return self.syntax(format!("duplicate field `{f}`"));
                    }
                    fields.push(f);
                }
                self.expect_sym(")")?;
                let origin = if self.eat_sym("=") {
                    self.origin()?
                } else {
                    ReservoirOrigin::Input
                };
                self.expect_sym(";")?;
                self.program.reservoirs.push(ReservoirDecl {
                    name,
                    fields,
                    origin,
                });
            } else if self.is_word("data") {
                self.bump();
                let name = self.name()?;
                self.expect_sym("(")?;
                let reservoir = self.name()?;
                if self.program.reservoir(&reservoir).is_none() {
                    return self.error(ParseErrorKind::Unbound(reservoir));
                }
                self.expect_sym(")")?;
                self.expect_sym(";")?;
                self.program.data.push(DataDecl { name, reservoir });
            } else if self.is_word("dense") {
                self.bump();
                let name = self.name()?;
                self.expect_sym("[")?;
                let mut dims = vec![self.dim()?];
                while self.eat_sym(",") {
                    dims.push(self.dim()?);
                }
                self.expect_sym("]")?;
                self.expect_sym(";")?;
                self.program.dense.push(DenseDecl { name, dims });
            } else if self.is_word("param") {
                self.bump();
                let name = self.name()?;
                self.expect_sym(";")?;
                self.program.params.push(name);
            } else {
                break;
            }
        }
        let mut body = Vec::new();
        while *self.peek() != Tok::Eof {
            body.push(self.stmt()?);
        }
        self.program.body = body;
        Ok(())
    }

    /// `project(S)` or `join(L, R, lf, rf)` after a reservoir declaration.
    fn origin(&mut self) -> PResult<ReservoirOrigin> {
        let kind = self.name()?;
        self.expect_sym("(")?;
        let declared = |p: &mut Self| -> PResult<String> {
            let n = p.name()?;
            if p.program.reservoir(&n).is_none() {
                return p.error(ParseErrorKind::Unbound(n));
            }
            Ok(n)
        };
        let origin = match kind.as_str() {
            "project" => ReservoirOrigin::Projection {
                source: declared(self)?,
            },
            "join" => {
                let left = declared(self)?;
                self.expect_sym(",")?;
                let right = declared(self)?;
                self.expect_sym(",")?;
                let left_field = FieldName::new(self.name()?);
                self.expect_sym(",")?;
                let right_field = FieldName::new(self.name()?);
                ReservoirOrigin::Join {
                    left,
                    right,
                    left_field,
                    right_field,
                }
            }
            other => return self.syntax(format!("unknown reservoir origin `{other}`")),
        };
        self.expect_sym(")")?;
        Ok(origin)
    }

    fn dim(&mut self) -> PResult<Expr> {
        match self.bump() {
            Tok::Ident(n) => Ok(Expr::Var(n)),
            Tok::Int(v) => Ok(Expr::Int(v)),
            other => self.syntax(format!("expected extent, found {}", describe(&other))),
        }
    }

    fn block(&mut self) -> PResult<Vec<Stmt>> {
        self.scopes.push(HashMap::new());
        let result = if self.eat_sym("{") {
            let mut body = Vec::new();
            loop {
                if self.eat_sym("}") {
                    break Ok(body);
                }
                if *self.peek() == Tok::Eof {
                    break self.syntax("unterminated block");
                }
                match self.stmt() {
                    Ok(s) => body.push(s),
                    Err(e) => break Err(e),
                }
            }
        } else {
            self.stmt().map(|s| vec![s])
        };
        self.scopes.pop();
        result
    }

    fn stmt(&mut self) -> PResult<Stmt> {
        if self.is_word("for") {
            return self.for_stmt();
        }
        if self.is_word("forelem") {
            return self.forelem_stmt();
        }
        if self.is_word("if") {
            self.bump();
            self.expect_sym("(")?;
            let cond = self.expr()?;
            self.expect_sym(")")?;
            let body = self.block()?;
            return Ok(Stmt::If { cond, body });
        }
        if ["int", "double", "float"].iter().any(|w| self.is_word(w))
            && matches!(self.peek_at(1), Tok::Ident(_))
        {
            self.bump();
        }
        // reservoir insertion: T = T ∪ (...)
        if let (Tok::Ident(a), Tok::Sym("="), Tok::Ident(b), Tok::Ident(u)) = (
            self.peek().clone(),
            self.peek_at(1).clone(),
            self.peek_at(2).clone(),
            self.peek_at(3).clone(),
        ) {
            if a == b && u == "union" && self.program.reservoir(&a).is_some() {
                for _ in 0..4 {
                    self.bump();
                }
                self.expect_sym("(")?;
                let mut values = vec![self.expr()?];
                while self.eat_sym(",") {
                    values.push(self.expr()?);
                }
                self.expect_sym(")")?;
                self.expect_sym(";")?;
                return Ok(Stmt::Insert {
                    reservoir: a,
                    values,
                });
            }
        }
        self.assignment()
    }

    fn assignment(&mut self) -> PResult<Stmt> {
        let declares_scalar = match (self.peek().clone(), self.peek_at(1)) {
            (Tok::Ident(n), Tok::Sym("=")) => {
                self.lookup(&n).is_none()
                    && self.program.dense_decl(&n).is_none()
                    && self.program.data_decl(&n).is_none()
                    && !self.is_global_value(&n)
            }
            _ => false,
        };
        let target = if declares_scalar {
            Expr::Var(self.name()?)
        } else {
            self.postfix()?
        };
        match &target {
            Expr::Var(n) => {
                if !declares_scalar && !matches!(self.lookup(n), Some(Binding::Scalar)) {
                    return self.syntax(format!("`{n}` is not assignable"));
                }
            }
            Expr::Index { .. } | Expr::Data { .. } => {}
            _ => return self.syntax("invalid assignment target"),
        }
        let op = match self.bump() {
            Tok::Sym("=") => AssignOp::Set,
            Tok::Sym("+=") => AssignOp::Add,
            Tok::Sym("-=") => AssignOp::Sub,
            other => return self.syntax(format!("expected assignment, found {}", describe(&other))),
        };
        let value = self.expr()?;
        self.expect_sym(";")?;
        if let (true, Expr::Var(n)) = (declares_scalar, &target) {
            self.bind(n.clone(), Binding::Scalar);
        }
        Ok(Stmt::Assign { target, op, value })
    }

    fn for_stmt(&mut self) -> PResult<Stmt> {
        self.expect_word("for")?;
        self.expect_sym("(")?;
        let var = self.name()?;
        self.expect_sym("=")?;
        let start = self.expr()?;
        let (lo, hi, descending) = if self.eat_sym("..") {
            let end = self.expr()?;
            (start.decrement(), end, false)
        } else if self.is_word("downto") {
            self.bump();
            let end = self.expr()?;
            (end.decrement(), start, true)
        } else if self.eat_sym(";") {
            let v = self.name()?;
            if v != var {
                return self.syntax(format!("loop condition tests `{v}`, expected `{var}`"));
            }
            let cmp = match self.bump() {
                Tok::Sym(s @ ("<" | "<=" | ">" | ">=")) => s,
                other => return self.syntax(format!("expected comparison, found {}", describe(&other))),
            };
            let end = self.expr()?;
            self.expect_sym(";")?;
            let v = self.name()?;
            if v != var {
                return self.syntax(format!("loop step updates `{v}`, expected `{var}`"));
            }
            let step = match self.bump() {
                Tok::Sym(s @ ("++" | "--")) => s,
                other => return self.syntax(format!("expected `++` or `--`, found {}", describe(&other))),
            };
            match (cmp, step) {
                ("<=", "++") => (start.decrement(), end, false),
                ("<", "++") => (start.decrement(), end.decrement(), false),
                (">=", "--") => (end.decrement(), start, true),
                (">", "--") => (end, start, true),
                _ => return self.syntax("loop direction does not match its condition"),
            }
        } else {
            return self.syntax("expected `..`, `downto` or `;` in for header");
        };
        self.expect_sym(")")?;
        self.scopes.push(HashMap::new());
        self.bind(var.clone(), Binding::Index);
        let body = self.block();
        self.scopes.pop();
        Ok(Stmt::For {
            var,
            lo,
            hi,
            descending,
            body: body?,
        })
    }

    fn forelem_stmt(&mut self) -> PResult<Stmt> {
        self.expect_word("forelem")?;
        self.expect_sym("(")?;
        let var = self.name()?;
        self.expect_sym(";")?;
        let v2 = self.name()?;
        if v2 != var {
            return self.syntax(format!("forelem binds `{var}` but iterates `{v2}`"));
        }
        self.expect_word("in")?;
        let domain = self.subset()?;
        self.expect_sym(")")?;
        let binding = match &domain {
            Domain::Reservoir { name, .. } => Binding::Tuple(name.clone()),
            _ => Binding::Index,
        };
        self.scopes.push(HashMap::new());
        self.bind(var.clone(), binding);
        let body = self.block();
        self.scopes.pop();
        Ok(Stmt::Forelem {
            var,
            domain,
            body: body?,
        })
    }

    fn subset(&mut self) -> PResult<Domain> {
        if self.is_word("nat") && matches!(self.peek_at(1), Tok::Sym("(")) {
            self.bump();
            self.expect_sym("(")?;
            let extent = self.expr()?;
            self.expect_sym(")")?;
            return Ok(Domain::Range { extent });
        }
        if self.is_word("span") && matches!(self.peek_at(1), Tok::Sym("(")) {
            self.bump();
            self.expect_sym("(")?;
            let lo = self.expr()?;
            self.expect_sym(",")?;
            let hi = self.expr()?;
            self.expect_sym(")")?;
            return Ok(Domain::Span { lo, hi });
        }
        if self.is_word("blocks") && matches!(self.peek_at(1), Tok::Sym("(")) {
            self.bump();
            self.expect_sym("(")?;
            let extent = self.expr()?;
            self.expect_sym(",")?;
            let size = self.block_size()?;
            self.expect_sym(")")?;
            return Ok(Domain::Blocks { extent, size });
        }
        if self.is_word("block") && matches!(self.peek_at(1), Tok::Sym("(")) {
            self.bump();
            self.expect_sym("(")?;
            let outer = self.name()?;
            if self.lookup(&outer).is_none() {
                return self.error(ParseErrorKind::Unbound(outer));
            }
            self.expect_sym(",")?;
            let extent = self.expr()?;
            self.expect_sym(",")?;
            let size = self.block_size()?;
            self.expect_sym(")")?;
            return Ok(Domain::Block {
                outer,
                extent,
                size,
                compressed: None,
            });
        }
        let name = self.name()?;
        let Some(decl) = self.program.reservoir(&name).cloned() else {
            return self.error(ParseErrorKind::Unbound(name));
        };
        if !self.eat_sym(".") {
            return Ok(Domain::Reservoir { name, cond: None });
        }
        let mut fields = Vec::new();
        if self.eat_sym("(") {
            fields.push(self.field_of(&decl)?);
            while self.eat_sym(",") {
                fields.push(self.field_of(&decl)?);
            }
            self.expect_sym(")")?;
        } else {
            let f = self.field_of(&decl)?;
            if !self.is_sym("[") {
                return Ok(Domain::FieldValues {
                    reservoir: name,
                    field: f,
                });
            }
            fields.push(f);
        }
        self.expect_sym("[")?;
        let values = if fields.len() == 1 {
            vec![self.cond_value()?]
        } else if self.eat_sym("(") {
            let mut v = vec![self.cond_value()?];
            while self.eat_sym(",") {
                v.push(self.cond_value()?);
            }
            self.expect_sym(")")?;
            v
        } else {
            vec![self.cond_value()?]
        };
        if values.len() != fields.len() {
            return self.error(ParseErrorKind::Arity {
                fields: fields.len(),
                values: values.len(),
            });
        }
        self.expect_sym("]")?;
        Ok(Domain::Reservoir {
            name,
            cond: Some(Condition { fields, values }),
        })
    }

    fn block_size(&mut self) -> PResult<u32> {
        match self.bump() {
            Tok::Int(v) if v >= 1 && v <= u32::MAX as i64 => Ok(v as u32),
            other => self.syntax(format!("expected block size >= 1, found {}", describe(&other))),
        }
    }

    fn field_of(&mut self, decl: &ReservoirDecl) -> PResult<FieldName> {
        let f = FieldName::new(self.name()?);
        if !decl.fields.contains(&f) {
            return self.error(ParseErrorKind::Unbound(format!("{}.{}", decl.name, f)));
        }
        Ok(f)
    }

    fn cond_value(&mut self) -> PResult<CondValue> {
        if self.eat_sym("(") {
            let lo = self.expr()?;
            if self.eat_sym(",") {
                let hi = if self.is_word("inf") {
                    self.bump();
                    None
                } else {
                    Some(self.expr()?)
                };
                self.expect_sym(")")?;
                return Ok(CondValue::Interval { lo, hi });
            }
            self.expect_sym(")")?;
            return Ok(CondValue::Expr(lo));
        }
        Ok(CondValue::Expr(self.expr()?))
    }

    fn expr(&mut self) -> PResult<Expr> {
        let mut lhs = self.term()?;
        loop {
            let op = if self.is_sym("+") {
                BinOp::Add
            } else if self.is_sym("-") {
                BinOp::Sub
            } else {
                return Ok(lhs);
            };
            self.bump();
            let rhs = self.term()?;
            lhs = Expr::binary(op, lhs, rhs);
        }
    }

    fn term(&mut self) -> PResult<Expr> {
        let mut lhs = self.unary()?;
        loop {
            let op = if self.is_sym("*") {
                BinOp::Mul
            } else if self.is_sym("/") {
                BinOp::Div
            } else {
                return Ok(lhs);
            };
            self.bump();
            let rhs = self.unary()?;
            lhs = Expr::binary(op, lhs, rhs);
        }
    }

    fn unary(&mut self) -> PResult<Expr> {
        if self.eat_sym("-") {
            match self.peek().clone() {
                Tok::Int(v) => {
                    self.bump();
                    return Ok(Expr::Int(-v));
                }
                Tok::Real(v) => {
                    self.bump();
                    return Ok(Expr::Real(-v));
                }
                _ => return Ok(Expr::Neg(Box::new(self.unary()?))),
            }
        }
        self.postfix()
    }

    fn postfix(&mut self) -> PResult<Expr> {
        match self.peek().clone() {
            Tok::Int(v) => {
                self.bump();
                Ok(Expr::Int(v))
            }
            Tok::Real(v) => {
                self.bump();
                Ok(Expr::Real(v))
            }
            Tok::Sym("(") => {
                self.bump();
                let e = self.expr()?;
                self.expect_sym(")")?;
                Ok(e)
            }
            Tok::Ident(name) => {
                self.bump();
                self.named(name)
            }
            other => self.syntax(format!("expected expression, found {}", describe(&other))),
        }
    }

    fn named(&mut self, name: String) -> PResult<Expr> {
        match name.as_str() {
            "True" => return Ok(Expr::Int(1)),
            "False" => return Ok(Expr::Int(0)),
            "min" if self.is_sym("(") => {
                self.bump();
                let a = self.expr()?;
                self.expect_sym(",")?;
                let b = self.expr()?;
                self.expect_sym(")")?;
                return Ok(Expr::min(a, b));
            }
            "extent" if self.is_sym("(") => {
                self.bump();
                let reservoir = self.name()?;
                let Some(decl) = self.program.reservoir(&reservoir).cloned() else {
                    return self.error(ParseErrorKind::Unbound(reservoir));
                };
                self.expect_sym(".")?;
                let field = self.field_of(&decl)?;
                self.expect_sym(")")?;
                return Ok(Expr::FieldExtent { reservoir, field });
            }
            _ => {}
        }
        if self.program.data_decl(&name).is_some() && (self.is_sym("[") || self.is_sym("(")) {
            let close = if self.eat_sym("[") { "]" } else {
                self.bump();
                ")"
            };
            let tuple = self.name()?;
            match self.lookup(&tuple) {
                Some(Binding::Tuple(_)) => {}
                Some(_) => return self.syntax(format!("`{tuple}` is not a tuple variable")),
                None => return self.error(ParseErrorKind::Unbound(tuple)),
            }
            self.expect_sym(close)?;
            return Ok(Expr::Data {
                binding: name,
                tuple,
            });
        }
        if self.is_sym("[") {
            if self.program.dense_decl(&name).is_none() {
                return self.error(ParseErrorKind::Unbound(name));
            }
            let mut indices = Vec::new();
            while self.eat_sym("[") {
                indices.push(self.expr()?);
                while self.eat_sym(",") {
                    indices.push(self.expr()?);
                }
                self.expect_sym("]")?;
            }
            return Ok(Expr::Index {
                array: name,
                indices,
            });
        }
        if self.is_sym("(") {
            self.bump();
            let mut args = Vec::new();
            if !self.is_sym(")") {
                args.push(self.expr()?);
                while self.eat_sym(",") {
                    args.push(self.expr()?);
                }
            }
            self.expect_sym(")")?;
            return Ok(Expr::Call { func: name, args });
        }
        if self.is_sym(".") && !matches!(self.peek_at(1), Tok::Sym(".")) {
            match self.lookup(&name).cloned() {
                Some(Binding::Tuple(res)) => {
                    self.bump();
                    let field = FieldName::new(self.name()?);
                    let decl = self.program.reservoir(&res).expect("declared reservoir");
                    if !decl.fields.contains(&field) {
                        return self.error(ParseErrorKind::Unbound(format!("{name}.{field}")));
                    }
                    return Ok(Expr::Field { var: name, field });
                }
                Some(_) => return self.syntax(format!("`{name}` is not a tuple variable")),
                None => return self.error(ParseErrorKind::Unbound(name)),
            }
        }
        match self.lookup(&name) {
            Some(Binding::Tuple(_)) => self.syntax(format!("tuple variable `{name}` used as a value")),
            Some(_) => Ok(Expr::Var(name)),
            None if self.is_global_value(&name) => Ok(Expr::Var(name)),
            None => self.error(ParseErrorKind::Unbound(name)),
        }
    }
}

fn describe(t: &Tok) -> String {
    match t {
        Tok::Ident(n) => format!("`{n}`"),
        Tok::Int(v) => format!("`{v}`"),
        Tok::Real(v) => format!("`{v}`"),
        Tok::Sym(s) => format!("`{s}`"),
        Tok::Eof => "end of input".to_string(),
    }
}
