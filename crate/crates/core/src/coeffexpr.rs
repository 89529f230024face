//! A small calculator language for time-dependent coefficients.
//!
//! Grammar (whitespace between tokens is ignored):
//!
//! ```text
//! expr    := term (('+' | '-') term)*
//! term    := unary (('*' | '/') unary)*
//! unary   := ('-' | '+') unary | power
//! power   := primary ('^' unary)?          right associative
//! primary := number | 't' | func '(' expr ')' | '(' expr ')'
//! func    := exp | ln | sin | cos | sqrt
//! number  := digits ['.' digits] [('e' | 'E') ['+' | '-'] digits]
//! ```

use std::fmt;

use nalgebra::DMatrix;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
    Pow,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Func {
    Exp,
    Ln,
    Sin,
    Cos,
    Sqrt,
}

impl Func {
    fn name(self) -> &'static str {
        match self {
            Func::Exp => "exp",
            Func::Ln => "ln",
            Func::Sin => "sin",
            Func::Cos => "cos",
            Func::Sqrt => "sqrt",
        }
    }

    fn from_name(s: &str) -> Option<Func> {
        Some(match s {
            "exp" => Func::Exp,
            "ln" => Func::Ln,
            "sin" => Func::Sin,
            "cos" => Func::Cos,
            "sqrt" => Func::Sqrt,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Num(f64),
    T,
    Neg(Box<Expr>),
    Bin(BinOp, Box<Expr>, Box<Expr>),
    Call(Func, Box<Expr>),
}

impl Expr {
    pub fn constant(x: f64) -> Expr {
        Expr::Num(x)
    }

    /// True when the expression does not mention `t`.
    pub fn is_constant(&self) -> bool {
        match self {
            Expr::Num(_) => true,
            Expr::T => false,
            Expr::Neg(a) | Expr::Call(_, a) => a.is_constant(),
            Expr::Bin(_, a, b) => a.is_constant() && b.is_constant(),
        }
    }

    pub fn eval(&self, t: f64) -> Result<f64> {
        let v = self.eval_raw(t)?;
        if v.is_finite() {
            Ok(v)
        } else {
            Err(Error::NonFinite(format!("{self} at t = {t}")))
        }
    }

    fn eval_raw(&self, t: f64) -> Result<f64> {
        Ok(match self {
            Expr::Num(x) => *x,
            Expr::T => t,
            Expr::Neg(a) => -a.eval_raw(t)?,
            Expr::Bin(op, a, b) => {
                let x = a.eval_raw(t)?;
                let y = b.eval_raw(t)?;
                match op {
                    BinOp::Add => x + y,
                    BinOp::Sub => x - y,
                    BinOp::Mul => x * y,
                    BinOp::Div => {
                        if y == 0.0 {
                            return Err(Error::Domain(format!("division by zero in {self} at t = {t}")));
                        }
                        x / y
                    }
                    BinOp::Pow => {
                        let r = x.powf(y);
                        if r.is_nan() || (x == 0.0 && y < 0.0) {
                            return Err(Error::Domain(format!("{x}^{y} in {self} at t = {t}")));
                        }
                        r
                    }
                }
            }
            Expr::Call(f, a) => {
                let x = a.eval_raw(t)?;
                match f {
                    Func::Exp => x.exp(),
                    Func::Ln => {
                        if x <= 0.0 {
                            return Err(Error::Domain(format!("ln({x}) at t = {t}")));
                        }
                        x.ln()
                    }
                    Func::Sin => x.sin(),
                    Func::Cos => x.cos(),
                    Func::Sqrt => {
                        if x < 0.0 {
                            return Err(Error::Domain(format!("sqrt({x}) at t = {t}")));
                        }
                        x.sqrt()
                    }
                }
            }
        })
    }
}

// Fully parenthesised output; `{:?}` on f64 is the shortest string that parses back to the same bits.
impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Num(x) => {
                if x.is_sign_negative() {
                    write!(f, "(-{:?})", -x)
                } else {
                    write!(f, "{x:?}")
                }
            }
            Expr::T => write!(f, "t"),
            Expr::Neg(a) => write!(f, "(-{a})"),
            Expr::Bin(op, a, b) => {
                let s = match op {
                    BinOp::Add => "+",
                    BinOp::Sub => "-",
                    BinOp::Mul => "*",
                    BinOp::Div => "/",
                    BinOp::Pow => "^",
                };
                write!(f, "({a}{s}{b})")
            }
            Expr::Call(func, a) => write!(f, "{}({a})", func.name()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Num(f64),
    Ident(String),
    Op(u8),
    LParen,
    RParen,
    End,
}

struct Parser<'a> {
    src: &'a [u8],
    pos: usize,
    tok: Tok,
    tok_start: usize,
}

impl<'a> Parser<'a> {
    fn new(src: &'a str) -> Result<Self> {
        let mut p = Parser { src: src.as_bytes(), pos: 0, tok: Tok::End, tok_start: 0 };
        p.advance()?;
        Ok(p)
    }

    fn advance(&mut self) -> Result<()> {
        while self.pos < self.src.len() && self.src[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
        self.tok_start = self.pos;
        if self.pos >= self.src.len() {
            self.tok = Tok::End;
            return Ok(());
        }
        let c = self.src[self.pos];
        self.tok = match c {
            b'+' | b'-' | b'*' | b'/' | b'^' => {
                self.pos += 1;
                Tok::Op(c)
            }
            b'(' => {
                self.pos += 1;
                Tok::LParen
            }
            b')' => {
                self.pos += 1;
                Tok::RParen
            }
            b'0'..=b'9' | b'.' => self.number()?,
            c if c.is_ascii_alphabetic() || c == b'_' => {
                let start = self.pos;
                while self.pos < self.src.len()
                    && (self.src[self.pos].is_ascii_alphanumeric() || self.src[self.pos] == b'_')
                {
                    self.pos += 1;
                }
                Tok::Ident(String::from_utf8_lossy(&self.src[start..self.pos]).into_owned())
            }
            _ => {
                return Err(Error::Syntax {
                    offset: self.pos,
                    msg: format!("unexpected character '{}'", c as char),
                })
            }
        };
        Ok(())
    }

    fn number(&mut self) -> Result<Tok> {
        let start = self.pos;
        let digits = |p: &mut Self| {
            let s = p.pos;
            while p.pos < p.src.len() && p.src[p.pos].is_ascii_digit() {
                p.pos += 1;
            }
            p.pos - s
        };
        let mut n = digits(self);
        if self.pos < self.src.len() && self.src[self.pos] == b'.' {
            self.pos += 1;
            n += digits(self);
        }
        if n == 0 {
            return Err(Error::Syntax { offset: start, msg: "malformed number".into() });
        }
        if self.pos < self.src.len() && (self.src[self.pos] == b'e' || self.src[self.pos] == b'E') {
            let save = self.pos;
            self.pos += 1;
            if self.pos < self.src.len() && (self.src[self.pos] == b'+' || self.src[self.pos] == b'-') {
                self.pos += 1;
            }
            if digits(self) == 0 {
                // "2e" is not an exponent; leave 'e' for the identifier scanner.
                self.pos = save;
            }
        }
        let text = std::str::from_utf8(&self.src[start..self.pos]).expect("ascii");
        text.parse::<f64>()
            .map(Tok::Num)
            .map_err(|_| Error::Syntax { offset: start, msg: format!("malformed number '{text}'") })
    }

    fn unexpected(&self) -> Error {
        let msg = match &self.tok {
            Tok::End => "unexpected end of input".to_string(),
            Tok::Op(c) => format!("unexpected operator '{}'", *c as char),
            Tok::RParen => "unexpected ')'".to_string(),
            Tok::LParen => "unexpected '('".to_string(),
            Tok::Num(x) => format!("unexpected number {x}"),
            Tok::Ident(s) => format!("unexpected identifier '{s}'"),
        };
        Error::Syntax { offset: self.tok_start, msg }
    }

    fn expr(&mut self) -> Result<Expr> {
        let mut lhs = self.term()?;
        while let Tok::Op(c @ (b'+' | b'-')) = self.tok {
            self.advance()?;
            let rhs = self.term()?;
            let op = if c == b'+' { BinOp::Add } else { BinOp::Sub };
            lhs = Expr::Bin(op, Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    fn term(&mut self) -> Result<Expr> {
        let mut lhs = self.unary()?;
        while let Tok::Op(c @ (b'*' | b'/')) = self.tok {
            self.advance()?;
            let rhs = self.unary()?;
            let op = if c == b'*' { BinOp::Mul } else { BinOp::Div };
            lhs = Expr::Bin(op, Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    fn unary(&mut self) -> Result<Expr> {
        match self.tok {
            Tok::Op(b'-') => {
                self.advance()?;
                Ok(Expr::Neg(Box::new(self.unary()?)))
            }
            Tok::Op(b'+') => {
                self.advance()?;
                self.unary()
            }
            _ => self.power(),
        }
    }

    fn power(&mut self) -> Result<Expr> {
        let base = self.primary()?;
        if self.tok == Tok::Op(b'^') {
            self.advance()?;
            let exp = self.unary()?;
            return Ok(Expr::Bin(BinOp::Pow, Box::new(base), Box::new(exp)));
        }
        Ok(base)
    }

    fn primary(&mut self) -> Result<Expr> {
        match self.tok.clone() {
            Tok::Num(x) => {
                self.advance()?;
                Ok(Expr::Num(x))
            }
            Tok::LParen => {
                self.advance()?;
                let e = self.expr()?;
                self.expect_rparen()?;
                Ok(e)
            }
            Tok::Ident(name) => {
                let offset = self.tok_start;
                self.advance()?;
                if name == "t" {
                    return Ok(Expr::T);
                }
                let func = Func::from_name(&name)
                    .ok_or(Error::UnknownIdentifier { name: name.clone(), offset })?;
                if self.tok != Tok::LParen {
                    return Err(Error::Syntax {
                        offset: self.tok_start,
                        msg: format!("expected '(' after {name}"),
                    });
                }
                self.advance()?;
                let arg = self.expr()?;
                self.expect_rparen()?;
                Ok(Expr::Call(func, Box::new(arg)))
            }
            _ => Err(self.unexpected()),
        }
    }

    fn expect_rparen(&mut self) -> Result<()> {
        if self.tok != Tok::RParen {
            return Err(Error::Syntax { offset: self.tok_start, msg: "expected ')'".into() });
        }
        self.advance()
    }
}

pub fn parse_expr(src: &str) -> Result<Expr> {
    if src.trim().is_empty() {
        return Err(Error::Syntax { offset: 0, msg: "empty expression".into() });
    }
    let mut p = Parser::new(src)?;
    let e = p.expr()?;
    if p.tok != Tok::End {
        return Err(p.unexpected());
    }
    Ok(e)
}

pub fn eval_expr(e: &Expr, t: f64) -> Result<f64> {
    e.eval(t)
}

/// Row-major grid of coefficient expressions.
#[derive(Debug, Clone, PartialEq)]
pub struct MatrixExpr {
    rows: usize,
    cols: usize,
    entries: Vec<Expr>,
}

impl MatrixExpr {
    pub fn new(rows: usize, cols: usize, entries: Vec<Expr>) -> Result<Self> {
        if entries.len() != rows * cols {
            return Err(Error::Dimension(format!(
                "{} entries for a {rows}x{cols} matrix",
                entries.len()
            )));
        }
        Ok(MatrixExpr { rows, cols, entries })
    }

    pub fn parse(rows: &[Vec<String>]) -> Result<Self> {
        let r = rows.len();
        let c = rows.first().map_or(0, |row| row.len());
        if rows.iter().any(|row| row.len() != c) {
            return Err(Error::Dimension("ragged matrix rows".into()));
        }
        let entries = rows.iter().flatten().map(|s| parse_expr(s)).collect::<Result<Vec<_>>>()?;
        MatrixExpr::new(r, c, entries)
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        MatrixExpr { rows, cols, entries: vec![Expr::Num(0.0); rows * cols] }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn entry(&self, i: usize, j: usize) -> &Expr {
        &self.entries[i * self.cols + j]
    }

    pub fn is_constant(&self) -> bool {
        self.entries.iter().all(Expr::is_constant)
    }

    pub fn eval(&self, t: f64) -> Result<DMatrix<f64>> {
        let mut m = DMatrix::zeros(self.rows, self.cols);
        for i in 0..self.rows {
            for j in 0..self.cols {
                m[(i, j)] = self.entry(i, j).eval(t)?;
            }
        }
        Ok(m)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ev(s: &str, t: f64) -> f64 {
        parse_expr(s).unwrap().eval(t).unwrap()
    }

    #[test]
    fn examples() {
        assert_eq!(ev("exp(-2*t)", 0.0), 1.0);
        assert_eq!(ev("t^2+1", 2.0), 5.0);
        assert_eq!(ev("sin(t)", 0.0), 0.0);
        assert_eq!(ev("exp(-t)", 1.0), (-1.0f64).exp());
        assert_eq!(ev("exp(-t)", 1.0), 0.36787944117144233);
    }

    #[test]
    fn syntax_error_offset() {
        match parse_expr("2*+*t") {
            Err(Error::Syntax { offset, .. }) => assert_eq!(offset, 3),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn precedence() {
        assert_eq!(ev("2+3*4", 0.0), 14.0);
        assert_eq!(ev("2^3^2", 0.0), 512.0);
        assert_eq!(ev("-2^2", 0.0), -4.0);
        assert_eq!(ev("2^-1", 0.0), 0.5);
        assert_eq!(ev("8/4/2", 0.0), 1.0);
        assert_eq!(ev("1-2-3", 0.0), -4.0);
        assert_eq!(ev("2.5e-1*4", 0.0), 1.0);
    }

    #[test]
    fn domain_errors() {
        let e = parse_expr("1/t").unwrap();
        assert!(matches!(e.eval(0.0), Err(Error::Domain(_))));
        assert!(matches!(parse_expr("ln(t)").unwrap().eval(0.0), Err(Error::Domain(_))));
        assert!(matches!(parse_expr("sqrt(t)").unwrap().eval(-1.0), Err(Error::Domain(_))));
        assert!(matches!(parse_expr("exp(t)").unwrap().eval(1000.0), Err(Error::NonFinite(_))));
    }

    #[test]
    fn unknown_identifier() {
        assert!(matches!(parse_expr("x+1"), Err(Error::UnknownIdentifier { offset: 0, .. })));
        assert!(matches!(parse_expr("1+tan(t)"), Err(Error::UnknownIdentifier { offset: 2, .. })));
        assert!(parse_expr("").is_err());
        assert!(parse_expr("(1+2").is_err());
        assert!(parse_expr("1+2)").is_err());
    }

    #[test]
    fn matrix_expr() {
        let m = MatrixExpr::parse(&[
            vec!["0".into(), "1".into()],
            vec!["-exp(-2*t)".into(), "-1".into()],
        ])
        .unwrap();
        let v = m.eval(0.0).unwrap();
        assert_eq!(v[(1, 0)], -1.0);
        assert!(!m.is_constant());
        assert!(MatrixExpr::new(2, 2, vec![Expr::Num(0.0)]).is_err());
    }
}
