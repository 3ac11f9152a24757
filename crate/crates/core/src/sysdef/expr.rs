//! A small arithmetic expression language for vector fields declared in
//! configuration files.
//!
//! Grammar, loosest to tightest binding:
//!
//! ```text
//! expr    := term (('+' | '-') term)*
//! term    := unary (('*' | '/') unary)*
//! unary   := '-' unary | power
//! power   := primary ('^' unary)?          right-associative
//! primary := number | name | func '(' expr ')' | '(' expr ')'
//! ```
//!
//! Names are resolved against a [`Scope`] at parse time, so a parsed
//! [`Expr`] never looks anything up by string during evaluation.

use std::fmt;

use thiserror::Error;

use super::dual::Scalar;

/// Errors raised while turning text into an [`Expr`].
#[derive(Debug, Clone, PartialEq, Error)]
pub enum ParseError {
    #[error("syntax error at byte {offset}: {message}")]
    Syntax { offset: usize, message: String },
    #[error("undeclared identifier `{name}` at byte {offset}")]
    Undeclared { name: String, offset: usize },
    #[error("unknown function `{name}` at byte {offset}")]
    UnknownFunction { name: String, offset: usize },
}

impl ParseError {
    pub fn offset(&self) -> usize {
        match self {
            ParseError::Syntax { offset, .. }
            | ParseError::Undeclared { offset, .. }
            | ParseError::UnknownFunction { offset, .. } => *offset,
        }
    }
}

/// Evaluation failure: a function applied outside its domain.
#[derive(Debug, Clone, PartialEq, Error)]
#[error("domain error in `{subexpression}`: {reason}")]
pub struct DomainError {
    pub subexpression: String,
    pub reason: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Func {
    Sin,
    Cos,
    Tan,
    Exp,
    Log,
    Sqrt,
    Abs,
}

impl Func {
    fn from_name(name: &str) -> Option<Self> {
        Some(match name {
            "sin" => Func::Sin,
            "cos" => Func::Cos,
            "tan" => Func::Tan,
            "exp" => Func::Exp,
            "log" => Func::Log,
            "sqrt" => Func::Sqrt,
            "abs" => Func::Abs,
            _ => return None,
        })
    }

    pub fn name(self) -> &'static str {
        match self {
            Func::Sin => "sin",
            Func::Cos => "cos",
            Func::Tan => "tan",
            Func::Exp => "exp",
            Func::Log => "log",
            Func::Sqrt => "sqrt",
            Func::Abs => "abs",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
    Pow,
}

impl BinOp {
    fn symbol(self) -> char {
        match self {
            BinOp::Add => '+',
            BinOp::Sub => '-',
            BinOp::Mul => '*',
            BinOp::Div => '/',
            BinOp::Pow => '^',
        }
    }
}

/// A resolved variable reference.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Var {
    Time,
    Eps,
    /// Zero-based state component (`x1` is `State(0)`).
    State(usize),
    Param(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Num(f64),
    Var(Var),
    Neg(Box<Expr>),
    Binary(BinOp, Box<Expr>, Box<Expr>),
    Call(Func, Box<Expr>),
}

/// Names an expression may refer to.
#[derive(Debug, Clone, PartialEq)]
pub struct Scope {
    pub dimension: usize,
    pub params: Vec<String>,
    pub allow_time: bool,
    pub allow_eps: bool,
}

impl Scope {
    /// Scope for the autonomous part: states and parameters only.
    pub fn autonomous(dimension: usize, params: Vec<String>) -> Self {
        Scope { dimension, params, allow_time: false, allow_eps: false }
    }

    /// Scope for the perturbation: adds `t` and `eps`.
    pub fn forced(dimension: usize, params: Vec<String>) -> Self {
        Scope { dimension, params, allow_time: true, allow_eps: true }
    }

    fn resolve(&self, name: &str) -> Option<Var> {
        if let Some(j) = self.params.iter().position(|p| p == name) {
            return Some(Var::Param(j));
        }
        match name {
            "t" if self.allow_time => return Some(Var::Time),
            "eps" if self.allow_eps => return Some(Var::Eps),
            _ => {}
        }
        let idx = name.strip_prefix('x')?;
        if idx.starts_with('0') {
            return None;
        }
        let i: usize = idx.parse().ok()?;
        (1..=self.dimension).contains(&i).then_some(Var::State(i - 1))
    }
}

/// Values bound to the variables of a [`Scope`] during evaluation.
pub struct Bindings<'a, S> {
    pub t: f64,
    pub eps: f64,
    pub x: &'a [S],
    pub params: &'a [f64],
}

impl Expr {
    /// Evaluates over any scalar type (plain `f64` or dual numbers).
    pub fn eval<S: Scalar>(&self, env: &Bindings<'_, S>) -> Result<S, DomainError> {
        let lift = |v: f64| S::constant(v, env.x);
        Ok(match self {
            Expr::Num(v) => lift(*v),
            Expr::Var(Var::Time) => lift(env.t),
            Expr::Var(Var::Eps) => lift(env.eps),
            Expr::Var(Var::Param(j)) => lift(env.params[*j]),
            Expr::Var(Var::State(i)) => env.x[*i].clone(),
            Expr::Neg(a) => -a.eval(env)?,
            Expr::Binary(op, a, b) => {
                let a = a.eval(env)?;
                let b = b.eval(env)?;
                match op {
                    BinOp::Add => a + b,
                    BinOp::Sub => a - b,
                    BinOp::Mul => a * b,
                    BinOp::Div => {
                        if b.value() == 0.0 {
                            return Err(self.domain("division by zero"));
                        }
                        a / b
                    }
                    BinOp::Pow => {
                        let base = a.value();
                        let r = a.pow(&b);
                        if r.value().is_nan() && !base.is_nan() && !b.value().is_nan() {
                            return Err(self.domain("non-integer power of a negative base"));
                        }
                        r
                    }
                }
            }
            Expr::Call(func, a) => {
                let a = a.eval(env)?;
                match func {
                    Func::Sin => a.sin(),
                    Func::Cos => a.cos(),
                    Func::Tan => a.tan(),
                    Func::Exp => a.exp(),
                    Func::Log => {
                        if a.value() <= 0.0 {
                            return Err(self.domain("log of a non-positive argument"));
                        }
                        a.ln()
                    }
                    Func::Sqrt => {
                        if a.value() < 0.0 {
                            return Err(self.domain("sqrt of a negative argument"));
                        }
                        a.sqrt()
                    }
                    Func::Abs => a.abs(),
                }
            }
        })
    }

    fn domain(&self, reason: &str) -> DomainError {
        DomainError { subexpression: self.to_string(), reason: reason.to_string() }
    }

    /// True if `t` or `eps` occurs anywhere in the tree.
    pub fn mentions_time_or_eps(&self) -> bool {
        match self {
            Expr::Var(Var::Time) | Expr::Var(Var::Eps) => true,
            Expr::Num(_) | Expr::Var(_) => false,
            Expr::Neg(a) | Expr::Call(_, a) => a.mentions_time_or_eps(),
            Expr::Binary(_, a, b) => a.mentions_time_or_eps() || b.mentions_time_or_eps(),
        }
    }

    /// Renders with full parenthesisation using `scope` for names.
    pub fn display<'a>(&'a self, scope: &'a Scope) -> ScopedDisplay<'a> {
        ScopedDisplay { expr: self, scope: Some(scope) }
    }
}

pub struct ScopedDisplay<'a> {
    expr: &'a Expr,
    scope: Option<&'a Scope>,
}

impl fmt::Display for ScopedDisplay<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write_expr(f, self.expr, self.scope)
    }
}

fn write_expr(f: &mut fmt::Formatter<'_>, e: &Expr, scope: Option<&Scope>) -> fmt::Result {
    match e {
        Expr::Num(v) => write!(f, "{v:?}"),
        Expr::Var(Var::Time) => f.write_str("t"),
        Expr::Var(Var::Eps) => f.write_str("eps"),
        Expr::Var(Var::State(i)) => write!(f, "x{}", i + 1),
        Expr::Var(Var::Param(j)) => match scope.and_then(|s| s.params.get(*j)) {
            Some(name) => f.write_str(name),
            None => write!(f, "p{j}"),
        },
        Expr::Neg(a) => {
            f.write_str("(-")?;
            write_expr(f, a, scope)?;
            f.write_str(")")
        }
        Expr::Binary(op, a, b) => {
            f.write_str("(")?;
            write_expr(f, a, scope)?;
            write!(f, " {} ", op.symbol())?;
            write_expr(f, b, scope)?;
            f.write_str(")")
        }
        Expr::Call(func, a) => {
            write!(f, "{}(", func.name())?;
            write_expr(f, a, scope)?;
            f.write_str(")")
        }
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write_expr(f, self, None)
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Num(f64),
    Ident(String),
    Op(char),
    LParen,
    RParen,
    End,
}

struct Lexer<'a> {
    src: &'a str,
    pos: usize,
}

impl<'a> Lexer<'a> {
    fn next(&mut self) -> Result<(Tok, usize), ParseError> {
        let bytes = self.src.as_bytes();
        while self.pos < bytes.len() && bytes[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
        let start = self.pos;
        let Some(&c) = bytes.get(self.pos) else {
            return Ok((Tok::End, start));
        };
        if c.is_ascii_digit() || c == b'.' {
            let mut end = start;
            while end < bytes.len() && (bytes[end].is_ascii_digit() || bytes[end] == b'.') {
                end += 1;
            }
            if end < bytes.len() && (bytes[end] == b'e' || bytes[end] == b'E') {
                let mut k = end + 1;
                if k < bytes.len() && (bytes[k] == b'+' || bytes[k] == b'-') {
                    k += 1;
                }
                if k < bytes.len() && bytes[k].is_ascii_digit() {
                    while k < bytes.len() && bytes[k].is_ascii_digit() {
                        k += 1;
                    }
                    end = k;
                }
            }
            let text = &self.src[start..end];
            let v: f64 = text.parse().map_err(|_| ParseError::Syntax {
                offset: start,
                message: format!("malformed number `{text}`"),
            })?;
            self.pos = end;
            return Ok((Tok::Num(v), start));
        }
        if c.is_ascii_alphabetic() || c == b'_' {
            let mut end = start;
            while end < bytes.len() && (bytes[end].is_ascii_alphanumeric() || bytes[end] == b'_') {
                end += 1;
            }
            self.pos = end;
            return Ok((Tok::Ident(self.src[start..end].to_string()), start));
        }
        self.pos += 1;
        match c {
            b'+' | b'-' | b'*' | b'/' | b'^' => Ok((Tok::Op(c as char), start)),
            b'(' => Ok((Tok::LParen, start)),
            b')' => Ok((Tok::RParen, start)),
            _ => {
                let ch = self.src[start..].chars().next().unwrap_or('?');
                Err(ParseError::Syntax { offset: start, message: format!("unexpected character `{ch}`") })
            }
        }
    }
}

struct Parser<'a> {
    lexer: Lexer<'a>,
    tok: Tok,
    at: usize,
    scope: &'a Scope,
}

impl<'a> Parser<'a> {
    fn bump(&mut self) -> Result<(), ParseError> {
        let (tok, at) = self.lexer.next()?;
        self.tok = tok;
        self.at = at;
        Ok(())
    }

    fn unexpected(&self, wanted: &str) -> ParseError {
        let found = match &self.tok {
            Tok::Num(v) => format!("number {v}"),
            Tok::Ident(s) => format!("`{s}`"),
            Tok::Op(c) => format!("`{c}`"),
            Tok::LParen => "`(`".into(),
            Tok::RParen => "`)`".into(),
            Tok::End => "end of input".into(),
        };
        ParseError::Syntax { offset: self.at, message: format!("expected {wanted}, found {found}") }
    }

    fn expr(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.term()?;
        loop {
            let op = match self.tok {
                Tok::Op('+') => BinOp::Add,
                Tok::Op('-') => BinOp::Sub,
                _ => return Ok(lhs),
            };
            self.bump()?;
            let rhs = self.term()?;
            lhs = Expr::Binary(op, Box::new(lhs), Box::new(rhs));
        }
    }

    fn term(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.unary()?;
        loop {
            let op = match self.tok {
                Tok::Op('*') => BinOp::Mul,
                Tok::Op('/') => BinOp::Div,
                _ => return Ok(lhs),
            };
            self.bump()?;
            let rhs = self.unary()?;
            lhs = Expr::Binary(op, Box::new(lhs), Box::new(rhs));
        }
    }

    fn unary(&mut self) -> Result<Expr, ParseError> {
        if self.tok == Tok::Op('-') {
            self.bump()?;
            return Ok(Expr::Neg(Box::new(self.unary()?)));
        }
        self.power()
    }

    fn power(&mut self) -> Result<Expr, ParseError> {
        let base = self.primary()?;
        if self.tok == Tok::Op('^') {
            self.bump()?;
            let exponent = self.unary()?;
            return Ok(Expr::Binary(BinOp::Pow, Box::new(base), Box::new(exponent)));
        }
        Ok(base)
    }

    fn primary(&mut self) -> Result<Expr, ParseError> {
        match self.tok.clone() {
            Tok::Num(v) => {
                self.bump()?;
                Ok(Expr::Num(v))
            }
            Tok::LParen => {
                self.bump()?;
                let inner = self.expr()?;
                if self.tok != Tok::RParen {
                    return Err(self.unexpected("`)`"));
                }
                self.bump()?;
                Ok(inner)
            }
            Tok::Ident(name) => {
                let at = self.at;
                self.bump()?;
                if self.tok == Tok::LParen {
                    let func = Func::from_name(&name)
                        .ok_or(ParseError::UnknownFunction { name, offset: at })?;
                    self.bump()?;
                    let arg = self.expr()?;
                    if self.tok != Tok::RParen {
                        return Err(self.unexpected("`)`"));
                    }
                    self.bump()?;
                    return Ok(Expr::Call(func, Box::new(arg)));
                }
                if let Some(var) = self.scope.resolve(&name) {
                    Ok(Expr::Var(var))
                } else if name == "pi" {
                    Ok(Expr::Num(std::f64::consts::PI))
                } else {
                    Err(ParseError::Undeclared { name, offset: at })
                }
            }
            _ => Err(self.unexpected("a number, name or `(`")),
        }
    }
}

/// Parses `text` against the names declared in `scope`.
pub fn parse_expression(text: &str, scope: &Scope) -> Result<Expr, ParseError> {
    if text.trim().is_empty() {
        return Err(ParseError::Syntax { offset: 0, message: "empty expression".into() });
    }
    let mut parser = Parser { lexer: Lexer { src: text, pos: 0 }, tok: Tok::End, at: 0, scope };
    parser.bump()?;
    let e = parser.expr()?;
    if parser.tok != Tok::End {
        return Err(parser.unexpected("an operator or end of input"));
    }
    Ok(e)
}
