//! Scalar constraint expressions.
//!
//! Grammar, lowest precedence first:
//!
//! ```text
//! expr    := term (('+' | '-') term)*
//! term    := unary ('*' unary)*
//! unary   := '-' unary | power
//! power   := primary ('^' INT)?
//! primary := NUMBER | VAR | FUNC '(' expr (',' expr)? ')' | '(' expr ')'
//! VAR     := 'x' INT          (1-based)
//! FUNC    := abs | sqrt | min | max
//! ```
//!
//! `-x1^2` parses as `-(x1^2)`. Piecewise bodies are written with
//! `max`/`min`, e.g. `sqrt(max(x1, 0))^3` for `x^{3/2}` on `x > 0` and `0`
//! elsewhere.

use std::fmt;

use thiserror::Error;

/// Values of `sqrt` arguments in `[-TOL_EVAL, 0)` are clamped to zero.
pub const TOL_EVAL: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ExprError {
    #[error("syntax error at offset {offset}: {message}")]
    Syntax { offset: usize, message: String },
    #[error("unknown identifier '{name}' at offset {offset}")]
    UnknownIdentifier { offset: usize, name: String },
    #[error("exponent at offset {offset} must be a nonnegative integer literal")]
    BadExponent { offset: usize },
    #[error("sqrt of negative value {0:e}")]
    Domain(f64),
    #[error("variable x{var} is out of range for a point of dimension {dim}")]
    VariableOutOfRange { var: usize, dim: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Const(f64),
    /// Zero-based coordinate index.
    Var(usize),
    Add(Box<Expr>, Box<Expr>),
    Sub(Box<Expr>, Box<Expr>),
    Mul(Box<Expr>, Box<Expr>),
    Neg(Box<Expr>),
    Pow(Box<Expr>, u32),
    Abs(Box<Expr>),
    Min(Box<Expr>, Box<Expr>),
    Max(Box<Expr>, Box<Expr>),
    Sqrt(Box<Expr>),
}

impl Expr {
    pub fn eval(&self, p: &[f64]) -> Result<f64, ExprError> {
        Ok(match self {
            Expr::Const(c) => *c,
            Expr::Var(i) => *p.get(*i).ok_or(ExprError::VariableOutOfRange { var: i + 1, dim: p.len() })?,
            Expr::Add(a, b) => a.eval(p)? + b.eval(p)?,
            Expr::Sub(a, b) => a.eval(p)? - b.eval(p)?,
            Expr::Mul(a, b) => a.eval(p)? * b.eval(p)?,
            Expr::Neg(a) => -a.eval(p)?,
            Expr::Pow(a, k) => a.eval(p)?.powi(*k as i32),
            Expr::Abs(a) => a.eval(p)?.abs(),
            Expr::Min(a, b) => a.eval(p)?.min(b.eval(p)?),
            Expr::Max(a, b) => a.eval(p)?.max(b.eval(p)?),
            Expr::Sqrt(a) => {
                let v = a.eval(p)?;
                if v < -TOL_EVAL {
                    return Err(ExprError::Domain(v));
                }
                v.max(0.0).sqrt()
            }
        })
    }

    /// Largest zero-based variable index used, if any.
    pub fn max_var(&self) -> Option<usize> {
        match self {
            Expr::Const(_) => None,
            Expr::Var(i) => Some(*i),
            Expr::Neg(a) | Expr::Pow(a, _) | Expr::Abs(a) | Expr::Sqrt(a) => a.max_var(),
            Expr::Add(a, b) | Expr::Sub(a, b) | Expr::Mul(a, b) | Expr::Min(a, b) | Expr::Max(a, b) => {
                match (a.max_var(), b.max_var()) {
                    (Some(x), Some(y)) => Some(x.max(y)),
                    (x, y) => x.or(y),
                }
            }
        }
    }
}

/// Fully parenthesized rendering that reparses to the same tree.
impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Const(c) => write!(f, "{c:?}"),
            Expr::Var(i) => write!(f, "x{}", i + 1),
            Expr::Add(a, b) => write!(f, "({a} + {b})"),
            Expr::Sub(a, b) => write!(f, "({a} - {b})"),
            Expr::Mul(a, b) => write!(f, "({a} * {b})"),
            Expr::Neg(a) => write!(f, "(-{a})"),
            Expr::Pow(a, k) => write!(f, "({a}^{k})"),
            Expr::Abs(a) => write!(f, "abs({a})"),
            Expr::Min(a, b) => write!(f, "min({a}, {b})"),
            Expr::Max(a, b) => write!(f, "max({a}, {b})"),
            Expr::Sqrt(a) => write!(f, "sqrt({a})"),
        }
    }
}

pub fn parse(text: &str) -> Result<Expr, ExprError> {
    let mut p = Parser { src: text.as_bytes(), pos: 0 };
    p.skip_ws();
    if p.pos == p.src.len() {
        return Err(ExprError::Syntax { offset: 0, message: "empty expression".into() });
    }
    let e = p.expr()?;
    p.skip_ws();
    if p.pos != p.src.len() {
        return Err(p.error(format!("unexpected '{}'", p.src[p.pos] as char)));
    }
    Ok(e)
}

struct Parser<'a> {
    src: &'a [u8],
    pos: usize,
}

impl Parser<'_> {
    fn error(&self, message: impl Into<String>) -> ExprError {
        ExprError::Syntax { offset: self.pos, message: message.into() }
    }

    fn skip_ws(&mut self) {
        while self.pos < self.src.len() && self.src[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
    }

    fn peek(&mut self) -> Option<u8> {
        self.skip_ws();
        self.src.get(self.pos).copied()
    }

    fn expect(&mut self, c: u8) -> Result<(), ExprError> {
        match self.peek() {
            Some(b) if b == c => {
                self.pos += 1;
                Ok(())
            }
            Some(b) => Err(self.error(format!("expected '{}', found '{}'", c as char, b as char))),
            None => Err(self.error(format!("expected '{}', found end of input", c as char))),
        }
    }

    fn expr(&mut self) -> Result<Expr, ExprError> {
        let mut lhs = self.term()?;
        loop {
            match self.peek() {
                Some(b'+') => {
                    self.pos += 1;
                    lhs = Expr::Add(Box::new(lhs), Box::new(self.term()?));
                }
                Some(b'-') => {
                    self.pos += 1;
                    lhs = Expr::Sub(Box::new(lhs), Box::new(self.term()?));
                }
                _ => return Ok(lhs),
            }
        }
    }

    fn term(&mut self) -> Result<Expr, ExprError> {
        let mut lhs = self.unary()?;
        while self.peek() == Some(b'*') {
            self.pos += 1;
            lhs = Expr::Mul(Box::new(lhs), Box::new(self.unary()?));
        }
        Ok(lhs)
    }

    fn unary(&mut self) -> Result<Expr, ExprError> {
        if self.peek() == Some(b'-') {
            self.pos += 1;
            return Ok(Expr::Neg(Box::new(self.unary()?)));
        }
        self.power()
    }

    fn power(&mut self) -> Result<Expr, ExprError> {
        let base = self.primary()?;
        if self.peek() != Some(b'^') {
            return Ok(base);
        }
        self.pos += 1;
        self.skip_ws();
        let start = self.pos;
        while self.pos < self.src.len() && self.src[self.pos].is_ascii_digit() {
            self.pos += 1;
        }
        let digits = &self.src[start..self.pos];
        let followed_by_number_char =
            self.pos < self.src.len() && matches!(self.src[self.pos], b'.' | b'e' | b'E');
        if digits.is_empty() || followed_by_number_char {
            return Err(ExprError::BadExponent { offset: start });
        }
        let k: u32 = std::str::from_utf8(digits)
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or(ExprError::BadExponent { offset: start })?;
        Ok(Expr::Pow(Box::new(base), k))
    }

    fn primary(&mut self) -> Result<Expr, ExprError> {
        match self.peek() {
            None => Err(self.error("unexpected end of input")),
            Some(b'(') => {
                self.pos += 1;
                let e = self.expr()?;
                self.expect(b')')?;
                Ok(e)
            }
            Some(c) if c.is_ascii_digit() || c == b'.' => self.number(),
            Some(c) if c.is_ascii_alphabetic() => self.identifier(),
            Some(c) => Err(self.error(format!("unexpected '{}'", c as char))),
        }
    }

    fn number(&mut self) -> Result<Expr, ExprError> {
        let start = self.pos;
        let s = self.src;
        let mut i = self.pos;
        while i < s.len() && (s[i].is_ascii_digit() || s[i] == b'.') {
            i += 1;
        }
        if i < s.len() && (s[i] == b'e' || s[i] == b'E') {
            let mut j = i + 1;
            if j < s.len() && (s[j] == b'+' || s[j] == b'-') {
                j += 1;
            }
            if j < s.len() && s[j].is_ascii_digit() {
                while j < s.len() && s[j].is_ascii_digit() {
                    j += 1;
                }
                i = j;
            }
        }
        let text = std::str::from_utf8(&s[start..i]).expect("ascii");
        let v: f64 = text.parse().map_err(|_| ExprError::Syntax {
            offset: start,
            message: format!("malformed number '{text}'"),
        })?;
        self.pos = i;
        Ok(Expr::Const(v))
    }

    fn identifier(&mut self) -> Result<Expr, ExprError> {
        let start = self.pos;
        while self.pos < self.src.len() && self.src[self.pos].is_ascii_alphanumeric() {
            self.pos += 1;
        }
        let name = std::str::from_utf8(&self.src[start..self.pos]).expect("ascii");
        if let Some(digits) = name.strip_prefix('x') {
            if !digits.is_empty() && digits.bytes().all(|b| b.is_ascii_digit()) {
                return match digits.parse::<usize>() {
                    Ok(k) if k >= 1 => Ok(Expr::Var(k - 1)),
                    _ => Err(ExprError::UnknownIdentifier { offset: start, name: name.into() }),
                };
            }
        }
        let arity = match name {
            "abs" | "sqrt" => 1,
            "min" | "max" => 2,
            _ => return Err(ExprError::UnknownIdentifier { offset: start, name: name.into() }),
        };
        self.expect(b'(')?;
        let a = self.expr()?;
        let e = if arity == 1 {
            if name == "abs" {
                Expr::Abs(Box::new(a))
            } else {
                Expr::Sqrt(Box::new(a))
            }
        } else {
            self.expect(b',')?;
            let b = self.expr()?;
            if name == "min" {
                Expr::Min(Box::new(a), Box::new(b))
            } else {
                Expr::Max(Box::new(a), Box::new(b))
            }
        };
        self.expect(b')')?;
        Ok(e)
    }
}
