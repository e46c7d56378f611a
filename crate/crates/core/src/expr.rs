//! The textual expression language problems are written in.
//!
//! Grammar (binding tightest last): `+ -` < `* /` < unary `-` < `^`, with
//! `^` right-associative and parentheses as usual. Variables match
//! `[a-zA-Z][a-zA-Z0-9_]*`; the known functions are `sin`, `cos`, `exp`,
//! `ln`, `sqrt`, `abs`. There is no implicit multiplication: `2x` is a
//! syntax error.
//!
//! Evaluation is generic over [`Scalar`], so one tree evaluates over plain
//! floats or dual numbers without separate code paths:
//!
//! ```
//! use noether_dt_core::diff::Dual;
//! use noether_dt_core::expr::{parse, Env};
//!
//! let e = parse("x1^2 - 2*u1").unwrap();
//! let mut env = Env::new();
//! env.bind("x1", 3.0).bind("u1", 0.5);
//! assert_eq!(e.eval(&env).unwrap(), 8.0);
//!
//! // the same tree, differentiated in x1 by seeding a dual tangent
//! let mut env = Env::new();
//! env.bind("x1", Dual::seeded(3.0)).bind("u1", Dual::constant(0.5));
//! assert_eq!(e.eval(&env).unwrap().im, 6.0);
//! ```

use std::collections::BTreeSet;
use std::fmt;

use thiserror::Error;

use crate::diff::{NumError, Scalar};

/// Built-in unary functions.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Func {
    Sin,
    Cos,
    Exp,
    Ln,
    Sqrt,
    Abs,
}

impl Func {
    fn from_name(name: &str) -> Option<Func> {
        Some(match name {
            "sin" => Func::Sin,
            "cos" => Func::Cos,
            "exp" => Func::Exp,
            "ln" => Func::Ln,
            "sqrt" => Func::Sqrt,
            "abs" => Func::Abs,
            _ => return None,
        })
    }

    fn name(self) -> &'static str {
        match self {
            Func::Sin => "sin",
            Func::Cos => "cos",
            Func::Exp => "exp",
            Func::Ln => "ln",
            Func::Sqrt => "sqrt",
            Func::Abs => "abs",
        }
    }
}

/// Binary operators.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
    Pow,
}

/// Parsed abstract syntax tree.
#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Num(f64),
    Var(String),
    Neg(Box<Expr>),
    Bin(BinOp, Box<Expr>, Box<Expr>),
    Call(Func, Box<Expr>),
}

/// Name-to-value bindings for evaluation. Lookups are linear scans; the
/// vocabularies in play are a handful of names per context.
#[derive(Debug, Clone, Default)]
pub struct Env<T> {
    bindings: Vec<(String, T)>,
}

impl<T: Copy> Env<T> {
    pub fn new() -> Self {
        Env {
            bindings: Vec::new(),
        }
    }

    pub fn with_capacity(n: usize) -> Self {
        Env {
            bindings: Vec::with_capacity(n),
        }
    }

    /// Bind `name`, replacing any previous binding of the same name.
    pub fn bind(&mut self, name: impl Into<String>, value: T) -> &mut Self {
        let name = name.into();
        if let Some(slot) = self.bindings.iter_mut().find(|(n, _)| *n == name) {
            slot.1 = value;
        } else {
            self.bindings.push((name, value));
        }
        self
    }

    pub fn get(&self, name: &str) -> Option<T> {
        self.bindings
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, v)| *v)
    }
}

/// Evaluation failure: a free variable the environment does not bind, or a
/// numeric operation leaving its domain.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum EvalError {
    #[error("unbound variable `{0}`")]
    Unbound(String),
    #[error(transparent)]
    Domain(#[from] NumError),
}

impl Expr {
    /// Evaluate under `env`; every free variable must be bound.
    pub fn eval<T: Scalar>(&self, env: &Env<T>) -> Result<T, EvalError> {
        match self {
            Expr::Num(v) => Ok(T::from_f64(*v)),
            Expr::Var(name) => env
                .get(name)
                .ok_or_else(|| EvalError::Unbound(name.clone())),
            Expr::Neg(inner) => Ok(-inner.eval(env)?),
            Expr::Bin(op, lhs, rhs) => {
                let l = lhs.eval(env)?;
                let r = rhs.eval(env)?;
                Ok(match op {
                    BinOp::Add => l + r,
                    BinOp::Sub => l - r,
                    BinOp::Mul => l * r,
                    BinOp::Div => l.div(r)?,
                    BinOp::Pow => l.pow(r)?,
                })
            }
            Expr::Call(func, arg) => {
                let a = arg.eval(env)?;
                Ok(match func {
                    Func::Sin => a.sin(),
                    Func::Cos => a.cos(),
                    Func::Exp => a.exp(),
                    Func::Ln => a.ln()?,
                    Func::Sqrt => a.sqrt()?,
                    Func::Abs => a.abs(),
                })
            }
        }
    }

    /// Exactly the variable names appearing in the tree.
    pub fn free_vars(&self) -> BTreeSet<String> {
        let mut out = BTreeSet::new();
        self.collect_vars(&mut out);
        out
    }

    fn collect_vars(&self, out: &mut BTreeSet<String>) {
        match self {
            Expr::Num(_) => {}
            Expr::Var(name) => {
                out.insert(name.clone());
            }
            Expr::Neg(inner) => inner.collect_vars(out),
            Expr::Bin(_, lhs, rhs) => {
                lhs.collect_vars(out);
                rhs.collect_vars(out);
            }
            Expr::Call(_, arg) => arg.collect_vars(out),
        }
    }

    /// Copy of the tree with variables renamed through `map` (names absent
    /// from the map are kept).
    pub fn rename_vars(&self, map: &dyn Fn(&str) -> Option<String>) -> Expr {
        match self {
            Expr::Num(v) => Expr::Num(*v),
            Expr::Var(name) => Expr::Var(map(name).unwrap_or_else(|| name.clone())),
            Expr::Neg(inner) => Expr::Neg(Box::new(inner.rename_vars(map))),
            Expr::Bin(op, lhs, rhs) => Expr::Bin(
                *op,
                Box::new(lhs.rename_vars(map)),
                Box::new(rhs.rename_vars(map)),
            ),
            Expr::Call(func, arg) => Expr::Call(*func, Box::new(arg.rename_vars(map))),
        }
    }

    fn precedence(&self) -> u8 {
        match self {
            Expr::Num(_) | Expr::Var(_) | Expr::Call(..) => 5,
            Expr::Bin(BinOp::Pow, ..) => 4,
            Expr::Neg(_) => 3,
            Expr::Bin(BinOp::Mul, ..) | Expr::Bin(BinOp::Div, ..) => 2,
            Expr::Bin(BinOp::Add, ..) | Expr::Bin(BinOp::Sub, ..) => 1,
        }
    }

    fn fmt_prec(&self, f: &mut fmt::Formatter<'_>, min_prec: u8) -> fmt::Result {
        let prec = self.precedence();
        if prec < min_prec {
            write!(f, "(")?;
        }
        match self {
            Expr::Num(v) => write!(f, "{v}")?,
            Expr::Var(name) => write!(f, "{name}")?,
            Expr::Neg(inner) => {
                write!(f, "-")?;
                inner.fmt_prec(f, 3)?;
            }
            Expr::Bin(op, lhs, rhs) => {
                // Left-associative operators reparse correctly when the right
                // child binds strictly tighter; `^` is the mirror image.
                let (sym, lp, rp) = match op {
                    BinOp::Add => (" + ", 1, 2),
                    BinOp::Sub => (" - ", 1, 2),
                    BinOp::Mul => ("*", 2, 3),
                    BinOp::Div => ("/", 2, 3),
                    BinOp::Pow => ("^", 5, 3),
                };
                lhs.fmt_prec(f, lp)?;
                write!(f, "{sym}")?;
                rhs.fmt_prec(f, rp)?;
            }
            Expr::Call(func, arg) => {
                write!(f, "{}(", func.name())?;
                arg.fmt_prec(f, 0)?;
                write!(f, ")")?;
            }
        }
        if prec < min_prec {
            write!(f, ")")?;
        }
        Ok(())
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.fmt_prec(f, 0)
    }
}

/// Syntax error with the byte offset it occurred at.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("at byte {offset}: {message}")]
pub struct ParseError {
    pub offset: usize,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Num(f64),
    Ident(String),
    Plus,
    Minus,
    Star,
    Slash,
    Caret,
    LParen,
    RParen,
    Eof,
}

impl Tok {
    fn describe(&self) -> String {
        match self {
            Tok::Num(v) => format!("number `{v}`"),
            Tok::Ident(s) => format!("`{s}`"),
            Tok::Plus => "`+`".into(),
            Tok::Minus => "`-`".into(),
            Tok::Star => "`*`".into(),
            Tok::Slash => "`/`".into(),
            Tok::Caret => "`^`".into(),
            Tok::LParen => "`(`".into(),
            Tok::RParen => "`)`".into(),
            Tok::Eof => "end of input".into(),
        }
    }
}

struct Lexer<'a> {
    src: &'a [u8],
    pos: usize,
}

impl<'a> Lexer<'a> {
    fn new(src: &'a str) -> Self {
        Lexer {
            src: src.as_bytes(),
            pos: 0,
        }
    }

    fn skip_ws(&mut self) {
        while self.pos < self.src.len() && self.src[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
    }

    fn next_token(&mut self) -> Result<(usize, Tok), ParseError> {
        self.skip_ws();
        let start = self.pos;
        if self.pos >= self.src.len() {
            return Ok((start, Tok::Eof));
        }
        let c = self.src[self.pos];
        let single = match c {
            b'+' => Some(Tok::Plus),
            b'-' => Some(Tok::Minus),
            b'*' => Some(Tok::Star),
            b'/' => Some(Tok::Slash),
            b'^' => Some(Tok::Caret),
            b'(' => Some(Tok::LParen),
            b')' => Some(Tok::RParen),
            _ => None,
        };
        if let Some(tok) = single {
            self.pos += 1;
            return Ok((start, tok));
        }
        if c.is_ascii_digit() {
            return self.lex_number(start);
        }
        if c.is_ascii_alphabetic() {
            while self.pos < self.src.len()
                && (self.src[self.pos].is_ascii_alphanumeric() || self.src[self.pos] == b'_')
            {
                self.pos += 1;
            }
            let name = std::str::from_utf8(&self.src[start..self.pos])
                .expect("identifier bytes are ASCII")
                .to_owned();
            return Ok((start, Tok::Ident(name)));
        }
        Err(ParseError {
            offset: start,
            message: format!("unexpected character `{}`", c as char),
        })
    }

    fn lex_number(&mut self, start: usize) -> Result<(usize, Tok), ParseError> {
        while self.pos < self.src.len() && self.src[self.pos].is_ascii_digit() {
            self.pos += 1;
        }
        if self.pos < self.src.len() && self.src[self.pos] == b'.' {
            self.pos += 1;
            while self.pos < self.src.len() && self.src[self.pos].is_ascii_digit() {
                self.pos += 1;
            }
        }
        // Exponent suffix is consumed only when well formed, so `2e` lexes
        // as the number 2 followed by the identifier `e`.
        if self.pos < self.src.len() && (self.src[self.pos] | 0x20) == b'e' {
            let mut probe = self.pos + 1;
            if probe < self.src.len() && (self.src[probe] == b'+' || self.src[probe] == b'-') {
                probe += 1;
            }
            if probe < self.src.len() && self.src[probe].is_ascii_digit() {
                self.pos = probe;
                while self.pos < self.src.len() && self.src[self.pos].is_ascii_digit() {
                    self.pos += 1;
                }
            }
        }
        let text = std::str::from_utf8(&self.src[start..self.pos]).expect("digits are ASCII");
        let value: f64 = text.parse().map_err(|_| ParseError {
            offset: start,
            message: format!("malformed number `{text}`"),
        })?;
        Ok((start, Tok::Num(value)))
    }
}

struct Parser<'a> {
    lexer: Lexer<'a>,
    current: (usize, Tok),
}

impl<'a> Parser<'a> {
    fn new(src: &'a str) -> Result<Self, ParseError> {
        let mut lexer = Lexer::new(src);
        let current = lexer.next_token()?;
        Ok(Parser { lexer, current })
    }

    fn advance(&mut self) -> Result<(), ParseError> {
        self.current = self.lexer.next_token()?;
        Ok(())
    }

    fn error(&self, expected: &str) -> ParseError {
        ParseError {
            offset: self.current.0,
            message: format!("expected {expected}, found {}", self.current.1.describe()),
        }
    }

    fn additive(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.multiplicative()?;
        loop {
            let op = match self.current.1 {
                Tok::Plus => BinOp::Add,
                Tok::Minus => BinOp::Sub,
                _ => break,
            };
            self.advance()?;
            let rhs = self.multiplicative()?;
            lhs = Expr::Bin(op, Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    fn multiplicative(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.unary()?;
        loop {
            let op = match self.current.1 {
                Tok::Star => BinOp::Mul,
                Tok::Slash => BinOp::Div,
                _ => break,
            };
            self.advance()?;
            let rhs = self.unary()?;
            lhs = Expr::Bin(op, Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    fn unary(&mut self) -> Result<Expr, ParseError> {
        if self.current.1 == Tok::Minus {
            self.advance()?;
            let inner = self.unary()?;
            return Ok(Expr::Neg(Box::new(inner)));
        }
        self.power()
    }

    fn power(&mut self) -> Result<Expr, ParseError> {
        let base = self.atom()?;
        if self.current.1 == Tok::Caret {
            self.advance()?;
            // Right-associative; the exponent may itself be negated.
            let exponent = self.unary()?;
            return Ok(Expr::Bin(BinOp::Pow, Box::new(base), Box::new(exponent)));
        }
        Ok(base)
    }

    fn atom(&mut self) -> Result<Expr, ParseError> {
        match self.current.1.clone() {
            Tok::Num(v) => {
                self.advance()?;
                Ok(Expr::Num(v))
            }
            Tok::Ident(name) => {
                let offset = self.current.0;
                self.advance()?;
                if self.current.1 == Tok::LParen {
                    let func = Func::from_name(&name).ok_or_else(|| ParseError {
                        offset,
                        message: format!("unknown function `{name}`"),
                    })?;
                    self.advance()?;
                    let arg = self.additive()?;
                    if self.current.1 != Tok::RParen {
                        return Err(self.error("`)`"));
                    }
                    self.advance()?;
                    Ok(Expr::Call(func, Box::new(arg)))
                } else {
                    Ok(Expr::Var(name))
                }
            }
            Tok::LParen => {
                self.advance()?;
                let inner = self.additive()?;
                if self.current.1 != Tok::RParen {
                    return Err(self.error("`)`"));
                }
                self.advance()?;
                Ok(inner)
            }
            _ => Err(self.error("a number, variable, function call, or `(`")),
        }
    }
}

/// Parse an expression from text.
pub fn parse(text: &str) -> Result<Expr, ParseError> {
    let mut parser = Parser::new(text)?;
    let expr = parser.additive()?;
    if parser.current.1 != Tok::Eof {
        return Err(parser.error("end of input"));
    }
    Ok(expr)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diff::Dual;

    fn ev(text: &str, bindings: &[(&str, f64)]) -> f64 {
        let e = parse(text).unwrap();
        let mut env = Env::new();
        for (name, value) in bindings {
            env.bind(*name, *value);
        }
        e.eval(&env).unwrap()
    }

    #[test]
    fn precedence_and_associativity() {
        assert_eq!(ev("1+2*3", &[]), 7.0);
        assert_eq!(ev("2^3^2", &[]), 512.0);
        assert_eq!(ev("2*3-4/2", &[]), 4.0);
        assert_eq!(ev("-2^2", &[]), -4.0); // ^ binds tighter than unary -
        assert_eq!(ev("2^-1", &[]), 0.5);
        assert_eq!(ev("10-2-3", &[]), 5.0);
    }

    #[test]
    fn parses_control_cost_difference() {
        let e = parse("u1^2 - u2^2").unwrap();
        assert_eq!(
            e,
            Expr::Bin(
                BinOp::Sub,
                Box::new(Expr::Bin(
                    BinOp::Pow,
                    Box::new(Expr::Var("u1".into())),
                    Box::new(Expr::Num(2.0)),
                )),
                Box::new(Expr::Bin(
                    BinOp::Pow,
                    Box::new(Expr::Var("u2".into())),
                    Box::new(Expr::Num(2.0)),
                )),
            )
        );
        assert_eq!(ev("u1^2 - u2^2", &[("u1", 1.0), ("u2", 1.0)]), 0.0);
    }

    #[test]
    fn parses_variable_sum() {
        let e = parse("x2 + u1").unwrap();
        assert_eq!(
            e,
            Expr::Bin(
                BinOp::Add,
                Box::new(Expr::Var("x2".into())),
                Box::new(Expr::Var("u1".into())),
            )
        );
    }

    #[test]
    fn parses_gauge_term() {
        let e = parse("2*(x1+x2)*s1").unwrap();
        assert_eq!(
            e.free_vars().into_iter().collect::<Vec<_>>(),
            vec!["s1".to_string(), "x1".to_string(), "x2".to_string()]
        );
        let mut env = Env::new();
        env.bind("x1", 1.0).bind("x2", 2.0).bind("s1", 0.5);
        assert_eq!(e.eval(&env).unwrap(), 3.0);
    }

    #[test]
    fn eval_over_duals_applies_product_rule() {
        let e = parse("x2*u1").unwrap();
        let mut env = Env::new();
        env.bind("x2", Dual::seeded(2.0))
            .bind("u1", Dual::constant(3.0));
        let v = e.eval(&env).unwrap();
        assert_eq!(v.re, 6.0);
        assert_eq!(v.im, 3.0);
    }

    #[test]
    fn zero_seed_dual_matches_plain_eval() {
        let e = parse("sin(x1)*exp(u1) + x1/(u1+2)").unwrap();
        let mut envf = Env::new();
        envf.bind("x1", 0.7).bind("u1", -0.3);
        let plain = e.eval(&envf).unwrap();
        let mut envd: Env<Dual<f64>> = Env::new();
        envd.bind("x1", Dual::constant(0.7))
            .bind("u1", Dual::constant(-0.3));
        let dual = e.eval(&envd).unwrap();
        assert_eq!(dual.re, plain);
        assert_eq!(dual.im, 0.0);
    }

    #[test]
    fn free_vars_examples() {
        assert_eq!(
            parse("x1+s1")
                .unwrap()
                .free_vars()
                .into_iter()
                .collect::<Vec<_>>(),
            vec!["s1".to_string(), "x1".to_string()]
        );
        assert!(parse("3.5").unwrap().free_vars().is_empty());
        assert_eq!(
            parse("sin(k)*u1")
                .unwrap()
                .free_vars()
                .into_iter()
                .collect::<Vec<_>>(),
            vec!["k".to_string(), "u1".to_string()]
        );
    }

    #[test]
    fn unbound_variable_names_the_variable() {
        let e = parse("x1 + missing").unwrap();
        let mut env = Env::new();
        env.bind("x1", 1.0);
        assert_eq!(
            e.eval(&env).unwrap_err(),
            EvalError::Unbound("missing".into())
        );
    }

    #[test]
    fn syntax_errors_carry_byte_offsets() {
        let err = parse("x1 + * 2").unwrap_err();
        assert_eq!(err.offset, 5);
        let err = parse("2x").unwrap_err();
        assert_eq!(err.offset, 1); // no implicit multiplication

        let err = parse("(x1 + 2").unwrap_err();
        assert_eq!(err.offset, 7);
        assert!(err.message.contains("`)`"), "{}", err.message);
    }

    #[test]
    fn unknown_function_is_rejected() {
        let err = parse("tan(x1)").unwrap_err();
        assert!(err.message.contains("unknown function `tan`"));
        assert_eq!(err.offset, 0);
    }

    #[test]
    fn number_followed_by_e_identifier() {
        // `2e` is not a valid literal; it lexes as 2 then `e` and fails as
        // a missing operator, pointing at the identifier.
        let err = parse("2e").unwrap_err();
        assert_eq!(err.offset, 1);
        assert_eq!(ev("2e2", &[]), 200.0);
        assert_eq!(ev("2.5e-1", &[]), 0.25);
    }

    #[test]
    fn rename_substitutes_names() {
        let e = parse("xp1^2 - x1*xp2").unwrap();
        let renamed = e.rename_vars(&|name| name.strip_prefix("xp").map(|idx| format!("u{idx}")));
        assert_eq!(renamed.to_string(), "u1^2 - x1*u2");
    }

    #[test]
    fn display_inserts_minimal_parens() {
        let cases = [
            "x1 + x2*u1",
            "(x1 + x2)*u1",
            "x1 - (x2 - u1)",
            "2^x1^2",
            "(2^x1)^2",
            "-(x1 + x2)",
            "x1/(x2*u1)",
            "sin(x1 + 1)",
            "-x1^2",
        ];
        for src in cases {
            let tree = parse(src).unwrap();
            let printed = tree.to_string();
            let reparsed = parse(&printed).unwrap();
            assert_eq!(reparsed, tree, "{src} printed as {printed}");
        }
    }
}
