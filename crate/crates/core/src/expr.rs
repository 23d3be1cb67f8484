//! Expression language for amplitudes, units and phases.
//!
//! Grammar:
//!
//! ```text
//! expr   := term (('+' | '-') term)*
//! term   := unary (('*' | '/') unary)*
//! unary  := '-' unary | factor
//! factor := number | 'y'INT | 'x'INT
//!         | 'pow(' expr ',' ['-']INT ['/' INT] ')'
//!         | 'log(' expr ')' | 'abs(' expr ')'
//!         | 'piecewise(' cond ':' expr (';' cond ':' expr)* [';'] ')'
//!         | '(' expr ')'
//! cond   := expr ('<' | '<=' | '>' | '>=' | '==') expr
//! ```
//!
//! `y1, y2, …` are integration variables and `x1, x2, …` parameters. Power
//! exponents are exact rationals. Trees are immutable after parsing.

use std::fmt;

use num_rational::Rational64;
use num_traits::{One, Signed, ToPrimitive, Zero};
use thiserror::Error;

pub use crate::domain::DomainBox;
use crate::poly::Polynomial;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DomainViolation {
    LogOfNonPositive,
    ZeroToNegativePower,
    EvenRootOfNegative,
    DivisionByZero,
}

impl fmt::Display for DomainViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            DomainViolation::LogOfNonPositive => "log of a non-positive value",
            DomainViolation::ZeroToNegativePower => "zero raised to a negative power",
            DomainViolation::EvenRootOfNegative => "even root of a negative value",
            DomainViolation::DivisionByZero => "division by zero",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ExprError {
    #[error("syntax error at {line}:{column}: {message}")]
    Syntax { line: usize, column: usize, message: String },
    #[error("malformed rational exponent at {line}:{column}")]
    MalformedRational { line: usize, column: usize },
    #[error("non-rational exponent at {line}:{column}; write it as p/q")]
    NonRationalExponent { line: usize, column: usize },
    #[error("log argument `{arg}` is not positive at {point:?}")]
    LogNotPositive { arg: String, point: Vec<f64> },
    #[error("piecewise branches overlap at {point:?}")]
    OverlappingBranches { point: Vec<f64> },
    #[error("domain violation: {kind} at {point:?}")]
    Domain { kind: DomainViolation, point: Vec<f64> },
    #[error("no piecewise branch holds at {point:?}")]
    NoBranch { point: Vec<f64> },
    #[error("ambiguous piecewise branches at {point:?}")]
    AmbiguousBranch { point: Vec<f64> },
    #[error("variable y{index} is outside the {dim}-dimensional point")]
    MissingVariable { index: usize, dim: usize },
    #[error("parameter x{index} is not supplied")]
    MissingParameter { index: usize },
    #[error("not differentiable: {0}")]
    NonDifferentiable(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CmpOp {
    Lt,
    Le,
    Gt,
    Ge,
    Eq,
}

impl CmpOp {
    fn holds(self, a: f64, b: f64) -> bool {
        match self {
            CmpOp::Lt => a < b,
            CmpOp::Le => a <= b,
            CmpOp::Gt => a > b,
            CmpOp::Ge => a >= b,
            CmpOp::Eq => a == b,
        }
    }

    fn symbol(self) -> &'static str {
        match self {
            CmpOp::Lt => "<",
            CmpOp::Le => "<=",
            CmpOp::Gt => ">",
            CmpOp::Ge => ">=",
            CmpOp::Eq => "==",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Condition {
    pub lhs: Expr,
    pub op: CmpOp,
    pub rhs: Expr,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Branch {
    pub cond: Condition,
    pub value: Expr,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Const(f64),
    /// `y_{i+1}`
    Var(usize),
    /// `x_{i+1}`
    Param(usize),
    Neg(Box<Expr>),
    Add(Box<Expr>, Box<Expr>),
    Sub(Box<Expr>, Box<Expr>),
    Mul(Box<Expr>, Box<Expr>),
    Div(Box<Expr>, Box<Expr>),
    Pow(Box<Expr>, Rational64),
    Log(Box<Expr>),
    Abs(Box<Expr>),
    Piecewise(Vec<Branch>),
}

// ---------------------------------------------------------------------------
// construction helpers

impl Expr {
    pub fn constant(c: f64) -> Expr {
        Expr::Const(c)
    }

    /// `y_{i+1}`, 0-based index.
    pub fn var(i: usize) -> Expr {
        Expr::Var(i)
    }

    pub fn pow(self, r: Rational64) -> Expr {
        Expr::Pow(Box::new(self), r)
    }

    pub fn log(self) -> Expr {
        Expr::Log(Box::new(self))
    }

    pub fn abs(self) -> Expr {
        Expr::Abs(Box::new(self))
    }

    pub fn is_const(&self, c: f64) -> bool {
        matches!(self, Expr::Const(v) if *v == c)
    }
}

impl std::ops::Add for Expr {
    type Output = Expr;
    fn add(self, rhs: Expr) -> Expr {
        Expr::Add(Box::new(self), Box::new(rhs))
    }
}

impl std::ops::Sub for Expr {
    type Output = Expr;
    fn sub(self, rhs: Expr) -> Expr {
        Expr::Sub(Box::new(self), Box::new(rhs))
    }
}

impl std::ops::Mul for Expr {
    type Output = Expr;
    fn mul(self, rhs: Expr) -> Expr {
        Expr::Mul(Box::new(self), Box::new(rhs))
    }
}

impl std::ops::Div for Expr {
    type Output = Expr;
    fn div(self, rhs: Expr) -> Expr {
        Expr::Div(Box::new(self), Box::new(rhs))
    }
}

impl std::ops::Neg for Expr {
    type Output = Expr;
    fn neg(self) -> Expr {
        Expr::Neg(Box::new(self))
    }
}

// ---------------------------------------------------------------------------
// lexer

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Num { value: f64, integer: Option<i64> },
    Var(usize),
    Param(usize),
    Ident(String),
    Plus,
    Minus,
    Star,
    Slash,
    LParen,
    RParen,
    Comma,
    Colon,
    Semi,
    Cmp(CmpOp),
    End,
}

#[derive(Debug, Clone)]
struct Token {
    tok: Tok,
    line: usize,
    column: usize,
}

fn lex(text: &str) -> Result<Vec<Token>, ExprError> {
    let chars: Vec<char> = text.chars().collect();
    let mut out = Vec::new();
    let (mut line, mut col) = (1usize, 1usize);
    let mut i = 0;
    let syntax = |line, column, message: String| ExprError::Syntax { line, column, message };
    while i < chars.len() {
        let c = chars[i];
        let (tl, tc) = (line, col);
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
        let single = match c {
            '+' => Some(Tok::Plus),
            '-' => Some(Tok::Minus),
            '*' => Some(Tok::Star),
            '/' => Some(Tok::Slash),
            '(' => Some(Tok::LParen),
            ')' => Some(Tok::RParen),
            ',' => Some(Tok::Comma),
            ':' => Some(Tok::Colon),
            ';' => Some(Tok::Semi),
            _ => None,
        };
        if let Some(tok) = single {
            out.push(Token { tok, line: tl, column: tc });
            i += 1;
            col += 1;
            continue;
        }
        if c == '<' || c == '>' || c == '=' {
            let eq = chars.get(i + 1) == Some(&'=');
            let op = match (c, eq) {
                ('<', true) => CmpOp::Le,
                ('<', false) => CmpOp::Lt,
                ('>', true) => CmpOp::Ge,
                ('>', false) => CmpOp::Gt,
                ('=', true) => CmpOp::Eq,
                _ => return Err(syntax(tl, tc, "single '=' is not an operator; use '=='".into())),
            };
            let w = if eq { 2 } else { 1 };
            out.push(Token { tok: Tok::Cmp(op), line: tl, column: tc });
            i += w;
            col += w;
            continue;
        }
        if c.is_ascii_digit() || c == '.' {
            let start = i;
            while i < chars.len() && (chars[i].is_ascii_digit() || chars[i] == '.') {
                i += 1;
            }
            if i < chars.len() && (chars[i] == 'e' || chars[i] == 'E') {
                let mut j = i + 1;
                if j < chars.len() && (chars[j] == '+' || chars[j] == '-') {
                    j += 1;
                }
                if j < chars.len() && chars[j].is_ascii_digit() {
                    i = j;
                    while i < chars.len() && chars[i].is_ascii_digit() {
                        i += 1;
                    }
                }
            }
            let s: String = chars[start..i].iter().collect();
            let value: f64 = s.parse().map_err(|_| syntax(tl, tc, format!("bad number `{s}`")))?;
            let integer = if s.chars().all(|c| c.is_ascii_digit()) { s.parse::<i64>().ok() } else { None };
            col += i - start;
            out.push(Token { tok: Tok::Num { value, integer }, line: tl, column: tc });
            continue;
        }
        if c.is_ascii_alphabetic() || c == '_' {
            let start = i;
            while i < chars.len() && (chars[i].is_ascii_alphanumeric() || chars[i] == '_') {
                i += 1;
            }
            let s: String = chars[start..i].iter().collect();
            col += i - start;
            let tok = match (s.chars().next(), s[1..].parse::<usize>()) {
                (Some('y'), Ok(k)) if s.len() > 1 => {
                    if k == 0 {
                        return Err(syntax(tl, tc, "variables are numbered from y1".into()));
                    }
                    Tok::Var(k - 1)
                }
                (Some('x'), Ok(k)) if s.len() > 1 => {
                    if k == 0 {
                        return Err(syntax(tl, tc, "parameters are numbered from x1".into()));
                    }
                    Tok::Param(k - 1)
                }
                _ => Tok::Ident(s),
            };
            out.push(Token { tok, line: tl, column: tc });
            continue;
        }
        return Err(syntax(tl, tc, format!("unexpected character `{c}`")));
    }
    out.push(Token { tok: Tok::End, line, column: col });
    Ok(out)
}

// ---------------------------------------------------------------------------
// parser

struct Parser {
    toks: Vec<Token>,
    pos: usize,
}

impl Parser {
    fn peek(&self) -> &Token {
        &self.toks[self.pos]
    }

    fn next(&mut self) -> Token {
        let t = self.toks[self.pos].clone();
        if self.pos + 1 < self.toks.len() {
            self.pos += 1;
        }
        t
    }

    fn error(&self, message: impl Into<String>) -> ExprError {
        let t = self.peek();
        ExprError::Syntax { line: t.line, column: t.column, message: message.into() }
    }

    fn expect(&mut self, tok: Tok, what: &str) -> Result<(), ExprError> {
        if self.peek().tok == tok {
            self.next();
            Ok(())
        } else {
            Err(self.error(format!("expected {what}")))
        }
    }

    fn expr(&mut self) -> Result<Expr, ExprError> {
        let mut lhs = self.term()?;
        loop {
            match self.peek().tok {
                Tok::Plus => {
                    self.next();
                    lhs = lhs + self.term()?;
                }
                Tok::Minus => {
                    self.next();
                    lhs = lhs - self.term()?;
                }
                _ => return Ok(lhs),
            }
        }
    }

    fn term(&mut self) -> Result<Expr, ExprError> {
        let mut lhs = self.unary()?;
        loop {
            match self.peek().tok {
                Tok::Star => {
                    self.next();
                    lhs = lhs * self.unary()?;
                }
                Tok::Slash => {
                    self.next();
                    lhs = lhs / self.unary()?;
                }
                _ => return Ok(lhs),
            }
        }
    }

    fn unary(&mut self) -> Result<Expr, ExprError> {
        if self.peek().tok == Tok::Minus {
            self.next();
            // a literal directly after '-' is a negative constant
            if let Tok::Num { value, .. } = self.peek().tok {
                self.next();
                return Ok(Expr::Const(-value));
            }
            return Ok(-self.unary()?);
        }
        self.factor()
    }

    fn factor(&mut self) -> Result<Expr, ExprError> {
        let t = self.next();
        match t.tok {
            Tok::Num { value, .. } => Ok(Expr::Const(value)),
            Tok::Var(i) => Ok(Expr::Var(i)),
            Tok::Param(i) => Ok(Expr::Param(i)),
            Tok::LParen => {
                let e = self.expr()?;
                self.expect(Tok::RParen, "')'")?;
                Ok(e)
            }
            Tok::Ident(name) => {
                self.expect(Tok::LParen, "'(' after function name")?;
                let e = match name.as_str() {
                    "pow" => {
                        let base = self.expr()?;
                        self.expect(Tok::Comma, "',' in pow")?;
                        let r = self.rational()?;
                        base.pow(r)
                    }
                    "log" => self.expr()?.log(),
                    "abs" => self.expr()?.abs(),
                    "piecewise" => self.piecewise()?,
                    other => {
                        return Err(ExprError::Syntax {
                            line: t.line,
                            column: t.column,
                            message: format!("unknown function `{other}`"),
                        })
                    }
                };
                self.expect(Tok::RParen, "')'")?;
                Ok(e)
            }
            Tok::End => Err(ExprError::Syntax {
                line: t.line,
                column: t.column,
                message: "unexpected end of input".into(),
            }),
            other => Err(ExprError::Syntax {
                line: t.line,
                column: t.column,
                message: format!("unexpected token {other:?}"),
            }),
        }
    }

    fn integer(&mut self) -> Result<i64, ExprError> {
        let t = self.next();
        match t.tok {
            Tok::Num { integer: Some(k), .. } => Ok(k),
            Tok::Num { integer: None, .. } => {
                Err(ExprError::NonRationalExponent { line: t.line, column: t.column })
            }
            _ => Err(ExprError::MalformedRational { line: t.line, column: t.column }),
        }
    }

    fn rational(&mut self) -> Result<Rational64, ExprError> {
        let start = self.peek().clone();
        let neg = if self.peek().tok == Tok::Minus {
            self.next();
            true
        } else {
            false
        };
        let num = self.integer()?;
        let den = if self.peek().tok == Tok::Slash {
            self.next();
            self.integer()?
        } else {
            1
        };
        if den == 0 {
            return Err(ExprError::MalformedRational { line: start.line, column: start.column });
        }
        let r = Rational64::new(num, den);
        Ok(if neg { -r } else { r })
    }

    fn condition(&mut self) -> Result<Condition, ExprError> {
        let lhs = self.expr()?;
        let op = match self.next().tok {
            Tok::Cmp(op) => op,
            _ => return Err(self.error("expected comparison operator")),
        };
        let rhs = self.expr()?;
        Ok(Condition { lhs, op, rhs })
    }

    fn piecewise(&mut self) -> Result<Expr, ExprError> {
        let mut branches = Vec::new();
        loop {
            let cond = self.condition()?;
            self.expect(Tok::Colon, "':' after condition")?;
            let value = self.expr()?;
            branches.push(Branch { cond, value });
            if self.peek().tok == Tok::Semi {
                self.next();
            }
            if self.peek().tok == Tok::RParen {
                break;
            }
        }
        Ok(Expr::Piecewise(branches))
    }
}

/// Parse an expression (syntax only; see [`Expr::validate`] for the
/// sampling-based domain checks).
pub fn parse(text: &str) -> Result<Expr, ExprError> {
    let mut p = Parser { toks: lex(text)?, pos: 0 };
    let e = p.expr()?;
    if p.peek().tok != Tok::End {
        return Err(p.error("trailing input"));
    }
    Ok(e)
}

/// Parse and validate log positivity and branch disjointness on `domain`.
pub fn parse_on(text: &str, domain: &DomainBox) -> Result<Expr, ExprError> {
    let e = parse(text)?;
    e.validate(domain, &[])?;
    Ok(e)
}

// ---------------------------------------------------------------------------
// rendering

fn fmt_const(c: f64, f: &mut fmt::Formatter<'_>) -> fmt::Result {
    // `{:?}` is the shortest representation that round-trips
    write!(f, "{c:?}")
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Const(c) => fmt_const(*c, f),
            Expr::Var(i) => write!(f, "y{}", i + 1),
            Expr::Param(i) => write!(f, "x{}", i + 1),
            Expr::Neg(e) => write!(f, "-({e})"),
            Expr::Add(a, b) => write!(f, "({a} + {b})"),
            Expr::Sub(a, b) => write!(f, "({a} - {b})"),
            Expr::Mul(a, b) => write!(f, "({a} * {b})"),
            Expr::Div(a, b) => write!(f, "({a} / {b})"),
            Expr::Pow(e, r) => {
                if r.denom().is_one() {
                    write!(f, "pow({e}, {})", r.numer())
                } else {
                    write!(f, "pow({e}, {}/{})", r.numer(), r.denom())
                }
            }
            Expr::Log(e) => write!(f, "log({e})"),
            Expr::Abs(e) => write!(f, "abs({e})"),
            Expr::Piecewise(bs) => {
                write!(f, "piecewise(")?;
                for (k, b) in bs.iter().enumerate() {
                    if k > 0 {
                        write!(f, "; ")?;
                    }
                    write!(f, "{} {} {} : {}", b.cond.lhs, b.cond.op.symbol(), b.cond.rhs, b.value)?;
                }
                write!(f, ")")
            }
        }
    }
}

// ---------------------------------------------------------------------------
// evaluation

/// Real power with an exact rational exponent.
pub fn rational_pow(base: f64, r: Rational64) -> Result<f64, DomainViolation> {
    let (p, q) = (*r.numer(), *r.denom());
    if base == 0.0 {
        return if p < 0 {
            Err(DomainViolation::ZeroToNegativePower)
        } else if p == 0 {
            Ok(1.0)
        } else {
            Ok(0.0)
        };
    }
    if q == 1 {
        if let Ok(k) = i32::try_from(p) {
            return Ok(base.powi(k));
        }
    }
    if base < 0.0 {
        if q % 2 == 0 {
            return Err(DomainViolation::EvenRootOfNegative);
        }
        let mag = (-base).powf(p as f64 / q as f64);
        return Ok(if p % 2 == 0 { mag } else { -mag });
    }
    if q == 2 {
        let s = base.sqrt();
        if let Ok(k) = i32::try_from(p) {
            return Ok(s.powi(k));
        }
    }
    Ok(base.powf(p as f64 / q as f64))
}

impl Expr {
    /// Evaluate at `point` (variables) with `params`.
    pub fn evaluate(&self, point: &[f64], params: &[f64]) -> Result<f64, ExprError> {
        let dom = |kind| ExprError::Domain { kind, point: point.to_vec() };
        Ok(match self {
            Expr::Const(c) => *c,
            Expr::Var(i) => *point.get(*i).ok_or(ExprError::MissingVariable { index: i + 1, dim: point.len() })?,
            Expr::Param(i) => *params.get(*i).ok_or(ExprError::MissingParameter { index: i + 1 })?,
            Expr::Neg(e) => -e.evaluate(point, params)?,
            Expr::Add(a, b) => a.evaluate(point, params)? + b.evaluate(point, params)?,
            Expr::Sub(a, b) => a.evaluate(point, params)? - b.evaluate(point, params)?,
            Expr::Mul(a, b) => a.evaluate(point, params)? * b.evaluate(point, params)?,
            Expr::Div(a, b) => {
                let d = b.evaluate(point, params)?;
                if d == 0.0 {
                    return Err(dom(DomainViolation::DivisionByZero));
                }
                a.evaluate(point, params)? / d
            }
            Expr::Pow(e, r) => rational_pow(e.evaluate(point, params)?, *r).map_err(dom)?,
            Expr::Log(e) => {
                let v = e.evaluate(point, params)?;
                if v <= 0.0 {
                    return Err(dom(DomainViolation::LogOfNonPositive));
                }
                v.ln()
            }
            Expr::Abs(e) => e.evaluate(point, params)?.abs(),
            Expr::Piecewise(bs) => {
                let k = self.select_branch(bs, point, params)?;
                bs[k].value.evaluate(point, params)?
            }
        })
    }

    fn select_branch(&self, bs: &[Branch], point: &[f64], params: &[f64]) -> Result<usize, ExprError> {
        let mut chosen = None;
        for (k, b) in bs.iter().enumerate() {
            let l = b.cond.lhs.evaluate(point, params)?;
            let r = b.cond.rhs.evaluate(point, params)?;
            if b.cond.op.holds(l, r) {
                if chosen.is_some() {
                    return Err(ExprError::AmbiguousBranch { point: point.to_vec() });
                }
                chosen = Some(k);
            }
        }
        chosen.ok_or(ExprError::NoBranch { point: point.to_vec() })
    }

    /// Largest variable index used, plus one.
    pub fn var_count(&self) -> usize {
        let mut n = 0;
        self.visit(&mut |e| {
            if let Expr::Var(i) = e {
                n = n.max(i + 1);
            }
        });
        n
    }

    pub fn param_count(&self) -> usize {
        let mut n = 0;
        self.visit(&mut |e| {
            if let Expr::Param(i) = e {
                n = n.max(i + 1);
            }
        });
        n
    }

    fn visit(&self, f: &mut impl FnMut(&Expr)) {
        f(self);
        match self {
            Expr::Const(_) | Expr::Var(_) | Expr::Param(_) => {}
            Expr::Neg(e) | Expr::Pow(e, _) | Expr::Log(e) | Expr::Abs(e) => e.visit(f),
            Expr::Add(a, b) | Expr::Sub(a, b) | Expr::Mul(a, b) | Expr::Div(a, b) => {
                a.visit(f);
                b.visit(f);
            }
            Expr::Piecewise(bs) => {
                for b in bs {
                    b.cond.lhs.visit(f);
                    b.cond.rhs.visit(f);
                    b.value.visit(f);
                }
            }
        }
    }

    fn map_leaves(&self, f: &impl Fn(&Expr) -> Option<Expr>) -> Expr {
        if let Some(r) = f(self) {
            return r;
        }
        let b = |e: &Expr| Box::new(e.map_leaves(f));
        match self {
            Expr::Const(_) | Expr::Var(_) | Expr::Param(_) => self.clone(),
            Expr::Neg(e) => Expr::Neg(b(e)),
            Expr::Add(x, y) => Expr::Add(b(x), b(y)),
            Expr::Sub(x, y) => Expr::Sub(b(x), b(y)),
            Expr::Mul(x, y) => Expr::Mul(b(x), b(y)),
            Expr::Div(x, y) => Expr::Div(b(x), b(y)),
            Expr::Pow(e, r) => Expr::Pow(b(e), *r),
            Expr::Log(e) => Expr::Log(b(e)),
            Expr::Abs(e) => Expr::Abs(b(e)),
            Expr::Piecewise(bs) => Expr::Piecewise(
                bs.iter()
                    .map(|br| Branch {
                        cond: Condition {
                            lhs: br.cond.lhs.map_leaves(f),
                            op: br.cond.op,
                            rhs: br.cond.rhs.map_leaves(f),
                        },
                        value: br.value.map_leaves(f),
                    })
                    .collect(),
            ),
        }
    }

    /// Replace parameters by constants.
    pub fn substitute_params(&self, params: &[f64]) -> Expr {
        self.map_leaves(&|e| match e {
            Expr::Param(i) if *i < params.len() => Some(Expr::Const(params[*i])),
            _ => None,
        })
        .simplify()
    }

    /// Replace variable `y_{i+1}` by `replacement`.
    pub fn substitute_var(&self, i: usize, replacement: &Expr) -> Expr {
        self.map_leaves(&|e| match e {
            Expr::Var(k) if *k == i => Some(replacement.clone()),
            _ => None,
        })
    }

    /// Convert to a polynomial in `dim` variables when the tree is
    /// polynomial (no parameters, logs, abs, piecewise, fractional or
    /// negative powers, or division by non-constants).
    pub fn to_polynomial(&self, dim: usize) -> Option<Polynomial> {
        Some(match self {
            Expr::Const(c) => Polynomial::constant(dim, *c),
            Expr::Var(i) if *i < dim => Polynomial::var(dim, *i),
            Expr::Var(_) | Expr::Param(_) => return None,
            Expr::Neg(e) => e.to_polynomial(dim)?.scale(-1.0),
            Expr::Add(a, b) => a.to_polynomial(dim)?.add(&b.to_polynomial(dim)?),
            Expr::Sub(a, b) => a.to_polynomial(dim)?.sub(&b.to_polynomial(dim)?),
            Expr::Mul(a, b) => a.to_polynomial(dim)?.mul(&b.to_polynomial(dim)?),
            Expr::Div(a, b) => {
                let d = b.to_polynomial(dim)?;
                if d.degree() != 0 || d.is_zero() {
                    return None;
                }
                a.to_polynomial(dim)?.scale(1.0 / d.coefficient(&vec![0; dim]))
            }
            Expr::Pow(e, r) => {
                if !r.denom().is_one() || r.is_negative() {
                    return None;
                }
                e.to_polynomial(dim)?.powi(r.numer().to_u32()?)
            }
            Expr::Log(_) | Expr::Abs(_) | Expr::Piecewise(_) => return None,
        })
    }
}

// ---------------------------------------------------------------------------
// simplification and differentiation

impl Expr {
    /// Local algebraic cleanup: constant folding and the identities
    /// `x+0`, `x·1`, `x·0`, `x^1`, `x^0`.
    pub fn simplify(&self) -> Expr {
        match self {
            Expr::Const(_) | Expr::Var(_) | Expr::Param(_) => self.clone(),
            Expr::Neg(e) => match e.simplify() {
                Expr::Const(c) => Expr::Const(-c),
                Expr::Neg(inner) => *inner,
                s => -s,
            },
            Expr::Add(a, b) => match (a.simplify(), b.simplify()) {
                (Expr::Const(x), Expr::Const(y)) => Expr::Const(x + y),
                (Expr::Const(z), s) | (s, Expr::Const(z)) if z == 0.0 => s,
                (x, y) => x + y,
            },
            Expr::Sub(a, b) => match (a.simplify(), b.simplify()) {
                (Expr::Const(x), Expr::Const(y)) => Expr::Const(x - y),
                (s, Expr::Const(z)) if z == 0.0 => s,
                (Expr::Const(z), s) if z == 0.0 => (-s).simplify(),
                (x, y) => x - y,
            },
            Expr::Mul(a, b) => match (a.simplify(), b.simplify()) {
                (Expr::Const(x), Expr::Const(y)) => Expr::Const(x * y),
                (Expr::Const(z), _) | (_, Expr::Const(z)) if z == 0.0 => Expr::Const(0.0),
                (Expr::Const(o), s) | (s, Expr::Const(o)) if o == 1.0 => s,
                (x, y) => x * y,
            },
            Expr::Div(a, b) => match (a.simplify(), b.simplify()) {
                (Expr::Const(x), Expr::Const(y)) if y != 0.0 => Expr::Const(x / y),
                (Expr::Const(z), _) if z == 0.0 => Expr::Const(0.0),
                (s, Expr::Const(o)) if o == 1.0 => s,
                (x, y) => x / y,
            },
            Expr::Pow(e, r) => {
                let s = e.simplify();
                if r.is_zero() {
                    Expr::Const(1.0)
                } else if r.is_one() {
                    s
                } else if let Expr::Const(c) = s {
                    match rational_pow(c, *r) {
                        Ok(v) => Expr::Const(v),
                        Err(_) => Expr::Const(c).pow(*r),
                    }
                } else {
                    s.pow(*r)
                }
            }
            Expr::Log(e) => e.simplify().log(),
            Expr::Abs(e) => match e.simplify() {
                Expr::Const(c) => Expr::Const(c.abs()),
                s => s.abs(),
            },
            Expr::Piecewise(bs) => Expr::Piecewise(
                bs.iter()
                    .map(|b| Branch {
                        cond: Condition { lhs: b.cond.lhs.simplify(), op: b.cond.op, rhs: b.cond.rhs.simplify() },
                        value: b.value.simplify(),
                    })
                    .collect(),
            ),
        }
    }

    /// Symbolic ∂/∂y_{axis+1}. `d|u| = (u/|u|)·du`, valid where `u ≠ 0`;
    /// use [`Expr::differentiate_on`] to check that on a domain.
    pub fn differentiate(&self, axis: usize) -> Expr {
        self.derive(axis).simplify()
    }

    fn derive(&self, axis: usize) -> Expr {
        match self {
            Expr::Const(_) | Expr::Param(_) => Expr::Const(0.0),
            Expr::Var(i) => Expr::Const(if *i == axis { 1.0 } else { 0.0 }),
            Expr::Neg(e) => -e.derive(axis),
            Expr::Add(a, b) => a.derive(axis) + b.derive(axis),
            Expr::Sub(a, b) => a.derive(axis) - b.derive(axis),
            Expr::Mul(a, b) => a.derive(axis) * (**b).clone() + (**a).clone() * b.derive(axis),
            Expr::Div(a, b) => {
                (a.derive(axis) * (**b).clone() - (**a).clone() * b.derive(axis))
                    / (**b).clone().pow(Rational64::from_integer(2))
            }
            Expr::Pow(e, r) => {
                let lowered = *r - Rational64::one();
                Expr::Const(r.to_f64().unwrap_or(f64::NAN)) * (**e).clone().pow(lowered) * e.derive(axis)
            }
            Expr::Log(e) => e.derive(axis) / (**e).clone(),
            Expr::Abs(e) => ((**e).clone() / (**e).clone().abs()) * e.derive(axis),
            Expr::Piecewise(bs) => Expr::Piecewise(
                bs.iter().map(|b| Branch { cond: b.cond.clone(), value: b.value.derive(axis) }).collect(),
            ),
        }
    }

    /// Differentiate after checking, on quasi-random samples of `domain`,
    /// that every `abs` and `log` argument keeps a constant sign inside each
    /// piecewise branch.
    pub fn differentiate_on(&self, axis: usize, domain: &DomainBox, params: &[f64]) -> Result<Expr, ExprError> {
        let points = domain.halton_points(VALIDATION_SAMPLES);
        let mut guards: Vec<(String, i8)> = Vec::new();
        for p in &points {
            let mut seen = Vec::new();
            self.collect_sign_guards(p, params, &mut seen)?;
            for (label, sign) in seen {
                if sign == 0 {
                    continue;
                }
                match guards.iter_mut().find(|(l, _)| *l == label) {
                    Some((_, s)) if *s != sign => {
                        return Err(ExprError::NonDifferentiable(format!(
                            "argument `{label}` changes sign inside a piece (near {p:?})"
                        )));
                    }
                    Some(_) => {}
                    None => guards.push((label, sign)),
                }
            }
        }
        Ok(self.differentiate(axis))
    }

    fn collect_sign_guards(&self, p: &[f64], params: &[f64], out: &mut Vec<(String, i8)>) -> Result<(), ExprError> {
        match self {
            Expr::Const(_) | Expr::Var(_) | Expr::Param(_) => Ok(()),
            Expr::Abs(e) | Expr::Log(e) => {
                let v = match e.evaluate(p, params) {
                    Ok(v) => v,
                    Err(ExprError::Domain { .. }) => return Ok(()),
                    Err(err) => return Err(err),
                };
                let sign = if v > 0.0 {
                    1
                } else if v < 0.0 {
                    -1
                } else {
                    0
                };
                out.push((format!("{self}"), sign));
                e.collect_sign_guards(p, params, out)
            }
            Expr::Neg(e) | Expr::Pow(e, _) => e.collect_sign_guards(p, params, out),
            Expr::Add(a, b) | Expr::Sub(a, b) | Expr::Mul(a, b) | Expr::Div(a, b) => {
                a.collect_sign_guards(p, params, out)?;
                b.collect_sign_guards(p, params, out)
            }
            Expr::Piecewise(bs) => {
                let k = match self.select_branch(bs, p, params) {
                    Ok(k) => k,
                    Err(ExprError::NoBranch { .. }) => return Ok(()),
                    Err(e) => return Err(e),
                };
                let mut inner = Vec::new();
                bs[k].value.collect_sign_guards(p, params, &mut inner)?;
                out.extend(inner.into_iter().map(|(l, s)| (format!("branch{k}:{l}"), s)));
                Ok(())
            }
        }
    }

    /// Sampling checks on `domain`: log arguments positive and piecewise
    /// branches pairwise disjoint at 1000 Halton points. Other domain
    /// violations (isolated singular points) are not reported here.
    pub fn validate(&self, domain: &DomainBox, params: &[f64]) -> Result<(), ExprError> {
        for p in domain.halton_points(VALIDATION_SAMPLES) {
            self.check_point(&p, params)?;
        }
        Ok(())
    }

    fn check_point(&self, p: &[f64], params: &[f64]) -> Result<(), ExprError> {
        match self {
            Expr::Const(_) | Expr::Var(_) | Expr::Param(_) => Ok(()),
            Expr::Log(e) => {
                e.check_point(p, params)?;
                match e.evaluate(p, params) {
                    Ok(v) if v <= 0.0 => Err(ExprError::LogNotPositive { arg: e.to_string(), point: p.to_vec() }),
                    Ok(_) | Err(ExprError::Domain { .. }) | Err(ExprError::NoBranch { .. }) => Ok(()),
                    Err(err) => Err(err),
                }
            }
            Expr::Neg(e) | Expr::Pow(e, _) | Expr::Abs(e) => e.check_point(p, params),
            Expr::Add(a, b) | Expr::Sub(a, b) | Expr::Mul(a, b) | Expr::Div(a, b) => {
                a.check_point(p, params)?;
                b.check_point(p, params)
            }
            Expr::Piecewise(bs) => match self.select_branch(bs, p, params) {
                Ok(k) => bs[k].value.check_point(p, params),
                Err(ExprError::AmbiguousBranch { point }) => Err(ExprError::OverlappingBranches { point }),
                Err(ExprError::NoBranch { .. }) | Err(ExprError::Domain { .. }) => Ok(()),
                Err(e) => Err(e),
            },
        }
    }
}

/// Quasi-random points used by the sampling validators.
pub const VALIDATION_SAMPLES: usize = 1000;

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::Interval;
    use proptest::prelude::*;

    fn r(p: i64, q: i64) -> Rational64 {
        Rational64::new(p, q)
    }

    fn unit_box(lo: f64, hi: f64) -> DomainBox {
        DomainBox::new(vec![Interval::open(lo, hi).unwrap()])
    }

    #[test]
    fn parses_power_log_product() {
        let e = parse("pow(abs(y1), 1/2) * log(y1)").unwrap();
        let expected = Expr::Var(0).abs().pow(r(1, 2)) * Expr::Var(0).log();
        assert_eq!(e, expected);
    }

    #[test]
    fn zero_denominator_is_malformed() {
        assert!(matches!(parse("pow(y1, 1/0)"), Err(ExprError::MalformedRational { .. })));
    }

    #[test]
    fn decimal_exponent_is_rejected() {
        assert!(matches!(parse("pow(y1, 0.5)"), Err(ExprError::NonRationalExponent { .. })));
    }

    #[test]
    fn syntax_errors_carry_position() {
        match parse("y1 +\n  * 2") {
            Err(ExprError::Syntax { line, column, .. }) => assert_eq!((line, column), (2, 3)),
            other => panic!("{other:?}"),
        }
        assert!(parse("sin(y1)").is_err());
        assert!(parse("y1 y2").is_err());
        assert!(parse("y0").is_err());
    }

    #[test]
    fn piecewise_matches_abs() {
        let e = parse("piecewise(y1 < 0 : 0 - y1; y1 >= 0 : y1)").unwrap();
        for y in [-1.0, 1.0, -0.25, 3.5] {
            assert_eq!(e.evaluate(&[y], &[]).unwrap(), y.abs());
        }
    }

    #[test]
    fn evaluation_examples() {
        assert_eq!(parse("y1*y1 + 1").unwrap().evaluate(&[2.0], &[]).unwrap(), 5.0);
        assert_eq!(parse("pow(y1, 1/2) * log(y1)").unwrap().evaluate(&[1.0], &[]).unwrap(), 0.0);
        assert_eq!(parse("pow(y1, -1/2)").unwrap().evaluate(&[0.25], &[]).unwrap(), 2.0);
        assert_eq!(parse("x1 * y1").unwrap().evaluate(&[3.0], &[2.0]).unwrap(), 6.0);
    }

    #[test]
    fn domain_violations() {
        let dom = |t: &str, y: f64| match parse(t).unwrap().evaluate(&[y], &[]) {
            Err(ExprError::Domain { kind, .. }) => kind,
            other => panic!("{other:?}"),
        };
        assert_eq!(dom("log(y1)", 0.0), DomainViolation::LogOfNonPositive);
        assert_eq!(dom("pow(y1, -1/2)", 0.0), DomainViolation::ZeroToNegativePower);
        assert_eq!(dom("pow(y1, 1/2)", -1.0), DomainViolation::EvenRootOfNegative);
        assert_eq!(dom("1 / y1", 0.0), DomainViolation::DivisionByZero);
        assert_eq!(parse("pow(y1, 1/3)").unwrap().evaluate(&[-8.0], &[]).unwrap(), -2.0);
    }

    #[test]
    fn log_positivity_is_validated_on_domain() {
        assert!(parse_on("log(y1)", &unit_box(0.0, 2.0)).is_ok());
        assert!(matches!(parse_on("log(y1)", &unit_box(-1.0, 1.0)), Err(ExprError::LogNotPositive { .. })));
        assert!(matches!(
            parse_on("piecewise(y1 < 0.5 : 1; y1 > 0.25 : 2)", &unit_box(0.0, 1.0)),
            Err(ExprError::OverlappingBranches { .. })
        ));
    }

    #[test]
    fn derivative_examples() {
        let d = parse("pow(y1, 3)").unwrap().differentiate(0);
        assert_eq!(d, Expr::Const(3.0) * Expr::Var(0).pow(r(2, 1)));
        assert_eq!(d.evaluate(&[2.0], &[]).unwrap(), 12.0);

        let e = parse("pow(y1, 1/2) * log(y1)").unwrap();
        let d = e.differentiate(0);
        let y: f64 = 2.0;
        let exact = 0.5 * y.powf(-0.5) * y.ln() + y.powf(-0.5);
        assert!((d.evaluate(&[y], &[]).unwrap() - exact).abs() < 1e-14);
        let h = 1e-5;
        let fd = (e.evaluate(&[y + h], &[]).unwrap() - e.evaluate(&[y - h], &[]).unwrap()) / (2.0 * h);
        assert!((fd - exact).abs() < 1e-6);
    }

    #[test]
    fn sign_change_inside_piece_is_not_differentiable() {
        let e = parse("log(y1)").unwrap();
        assert!(matches!(e.differentiate_on(0, &unit_box(-1.0, 1.0), &[]), Err(ExprError::NonDifferentiable(_))));
        assert!(e.differentiate_on(0, &unit_box(0.5, 1.0), &[]).is_ok());
        let pw = parse("piecewise(y1 < 0 : abs(y1 + 0.5); y1 >= 0 : y1)").unwrap();
        assert!(pw.differentiate_on(0, &unit_box(-1.0, 1.0), &[]).is_err());
        let ok = parse("piecewise(y1 < 0 : abs(y1); y1 >= 0 : y1)").unwrap();
        assert!(ok.differentiate_on(0, &unit_box(-1.0, 1.0), &[]).is_ok());
    }

    #[test]
    fn polynomial_conversion() {
        let p = parse("(y1 + 2*y2) * y1 - 3 / 2").unwrap().to_polynomial(2).unwrap();
        assert_eq!(p.eval(&[1.0, 1.0]), 1.5);
        assert!(parse("log(y1)").unwrap().to_polynomial(1).is_none());
        assert!(parse("pow(y1, 1/2)").unwrap().to_polynomial(1).is_none());
        assert!(parse("1 / y1").unwrap().to_polynomial(1).is_none());
    }

    // -- random expressions for the round-trip and derivative properties --

    fn arb_expr() -> impl Strategy<Value = Expr> {
        let leaf = prop_oneof![
            (1u32..20).prop_map(|k| Expr::Const(k as f64 / 4.0)),
            Just(Expr::Var(0)),
            Just(Expr::Var(1)),
        ];
        leaf.prop_recursive(4, 24, 2, |inner| {
            prop_oneof![
                (inner.clone(), inner.clone()).prop_map(|(a, b)| a + b),
                (inner.clone(), inner.clone()).prop_map(|(a, b)| a - b),
                (inner.clone(), inner.clone()).prop_map(|(a, b)| a * b),
                inner.clone().prop_map(|a| -a),
                // positive-by-construction arguments keep logs, roots and
                // quotients inside their domain
                (inner.clone(), -3i64..4, 1i64..4)
                    .prop_map(|(a, p, q)| (a.clone() * a + Expr::Const(1.0)).pow(Rational64::new(p, q))),
                inner.clone().prop_map(|a| (a.clone() * a + Expr::Const(0.5)).log()),
                (inner.clone(), inner).prop_map(|(a, b)| a / (b.clone() * b + Expr::Const(1.0))),
            ]
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig { cases: 1000, ..ProptestConfig::default() })]

        #[test]
        fn render_then_parse_is_identity(e in arb_expr()) {
            let text = e.to_string();
            let back = parse(&text).unwrap();
            prop_assert_eq!(back, e);
        }

        #[test]
        fn derivative_matches_central_difference(
            e in arb_expr(),
            y1 in -2.0f64..2.0,
            y2 in -2.0f64..2.0,
            axis in 0usize..2,
        ) {
            let p = [y1, y2];
            let d = e.differentiate(axis).evaluate(&p, &[]).unwrap();
            let h = 1e-5;
            let mut pp = p;
            let mut pm = p;
            pp[axis] += h;
            pm[axis] -= h;
            let fd = (e.evaluate(&pp, &[]).unwrap() - e.evaluate(&pm, &[]).unwrap()) / (2.0 * h);
            let v = e.evaluate(&p, &[]).unwrap();
            // skip the rare tree whose values are too large for a 1e-5 step
            prop_assume!(v.abs() < 1e4 && d.abs() < 1e4);
            prop_assert!((d - fd).abs() <= 1e-4 * (1.0 + v.abs()), "d={} fd={} e={}", d, fd, e);
        }

        #[test]
        fn evaluation_is_bit_deterministic(e in arb_expr(), y1 in -2.0f64..2.0, y2 in -2.0f64..2.0) {
            let a = e.evaluate(&[y1, y2], &[]).unwrap();
            let b = e.evaluate(&[y1, y2], &[]).unwrap();
            prop_assert_eq!(a.to_bits(), b.to_bits());
        }
    }
}
