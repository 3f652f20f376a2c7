//! Scalar expression language for obstacle, boundary and coefficient data.
//!
//! Grammar (whitespace insensitive):
//!
//! ```text
//! expr   := term  (('+' | '-') term)*
//! term   := unary (('*' | '/') unary)*
//! unary  := '-' unary | power          (minus only at expression start,
//!                                       after '(' or after ',')
//! power  := atom ('^' power)?          (right associative)
//! atom   := number | 'pi' | 'x' | 'y' | 'z'
//!         | func '(' expr (',' expr)* ')' | '(' expr ')'
//! ```
//!
//! Precedence from loosest to tightest: `+ -`, `* /`, unary `-`, `^`.
//! A binary operator directly followed by unary minus is rejected; write
//! `2*(-x)` instead of `2*-x`. Functions: sin cos exp log sqrt abs min max.
//!
//! Evaluation never returns a silent NaN or infinity: division by zero,
//! `log`/`sqrt` outside their domains, fractional powers of negatives and
//! overflow all surface as errors naming the operation and the input point.

use crate::error::{Error, ParseError, Result};
use std::fmt;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Var {
    X,
    Y,
    Z,
}

impl Var {
    fn name(self) -> &'static str {
        match self {
            Var::X => "x",
            Var::Y => "y",
            Var::Z => "z",
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

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Func {
    Sin,
    Cos,
    Exp,
    Log,
    Sqrt,
    Abs,
    Min,
    Max,
}

impl Func {
    fn name(self) -> &'static str {
        match self {
            Func::Sin => "sin",
            Func::Cos => "cos",
            Func::Exp => "exp",
            Func::Log => "log",
            Func::Sqrt => "sqrt",
            Func::Abs => "abs",
            Func::Min => "min",
            Func::Max => "max",
        }
    }

    fn arity(self) -> usize {
        match self {
            Func::Min | Func::Max => 2,
            _ => 1,
        }
    }

    fn from_name(s: &str) -> Option<Func> {
        Some(match s {
            "sin" => Func::Sin,
            "cos" => Func::Cos,
            "exp" => Func::Exp,
            "log" => Func::Log,
            "sqrt" => Func::Sqrt,
            "abs" => Func::Abs,
            "min" => Func::Min,
            "max" => Func::Max,
            _ => return None,
        })
    }
}

/// Parsed expression tree. Structural equality (`PartialEq`) is the identity
/// used by the round-trip guarantee `parse(print(parse(s))) == parse(s)`.
#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Num(f64),
    Pi,
    Var(Var),
    Neg(Box<Expr>),
    Bin(BinOp, Box<Expr>, Box<Expr>),
    Call(Func, Vec<Expr>),
}

/// Values bound to the three variables. Referencing an unbound variable is an
/// evaluation error, so a 1D obstacle expression mentioning `y` fails loudly
/// rather than reading a default.
#[derive(Debug, Clone, Copy, Default)]
pub struct Bind {
    pub x: Option<f64>,
    pub y: Option<f64>,
    pub z: Option<f64>,
}

impl Bind {
    pub fn d1(x: f64) -> Bind {
        Bind {
            x: Some(x),
            ..Bind::default()
        }
    }

    pub fn d2(x: f64, y: f64) -> Bind {
        Bind {
            x: Some(x),
            y: Some(y),
            ..Bind::default()
        }
    }

    /// Chart binding: base coordinates plus the height coordinate `z`.
    pub fn chart(x: &[f64], z: f64) -> Bind {
        Bind {
            x: Some(x[0]),
            y: x.get(1).copied(),
            z: Some(z),
        }
    }

    fn get(&self, v: Var) -> Option<f64> {
        match v {
            Var::X => self.x,
            Var::Y => self.y,
            Var::Z => self.z,
        }
    }

    fn describe(&self) -> String {
        let mut parts = Vec::new();
        for (name, v) in [("x", self.x), ("y", self.y), ("z", self.z)] {
            if let Some(v) = v {
                parts.push(format!("{name}={v}"));
            }
        }
        format!("({})", parts.join(", "))
    }
}

pub fn parse(src: &str) -> std::result::Result<Expr, ParseError> {
    let mut p = Parser {
        src: src.as_bytes(),
        pos: 0,
    };
    p.skip_ws();
    let e = p.expr(true)?;
    p.skip_ws();
    if p.pos != p.src.len() {
        return Err(p.err("unexpected trailing input"));
    }
    Ok(e)
}

struct Parser<'a> {
    src: &'a [u8],
    pos: usize,
}

impl<'a> Parser<'a> {
    fn err(&self, message: impl Into<String>) -> ParseError {
        ParseError {
            offset: self.pos,
            message: message.into(),
        }
    }

    fn skip_ws(&mut self) {
        while self.pos < self.src.len() && self.src[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
    }

    fn peek(&self) -> Option<u8> {
        self.src.get(self.pos).copied()
    }

    fn eat(&mut self, c: u8) -> bool {
        if self.peek() == Some(c) {
            self.pos += 1;
            self.skip_ws();
            true
        } else {
            false
        }
    }

    fn expr(&mut self, unary_ok: bool) -> std::result::Result<Expr, ParseError> {
        let mut lhs = self.term(unary_ok)?;
        loop {
            let op = match self.peek() {
                Some(b'+') => BinOp::Add,
                Some(b'-') => BinOp::Sub,
                _ => return Ok(lhs),
            };
            self.pos += 1;
            self.skip_ws();
            self.reject_unary_after_op()?;
            let rhs = self.term(false)?;
            lhs = Expr::Bin(op, Box::new(lhs), Box::new(rhs));
        }
    }

    fn term(&mut self, unary_ok: bool) -> std::result::Result<Expr, ParseError> {
        let mut lhs = self.unary(unary_ok)?;
        loop {
            let op = match self.peek() {
                Some(b'*') => BinOp::Mul,
                Some(b'/') => BinOp::Div,
                _ => return Ok(lhs),
            };
            self.pos += 1;
            self.skip_ws();
            self.reject_unary_after_op()?;
            let rhs = self.unary(false)?;
            lhs = Expr::Bin(op, Box::new(lhs), Box::new(rhs));
        }
    }

    fn reject_unary_after_op(&self) -> std::result::Result<(), ParseError> {
        if self.peek() == Some(b'-') {
            return Err(self.err(
                "operator directly followed by unary minus; parenthesize the operand",
            ));
        }
        Ok(())
    }

    fn unary(&mut self, unary_ok: bool) -> std::result::Result<Expr, ParseError> {
        if self.peek() == Some(b'-') {
            if !unary_ok {
                return Err(self.err(
                    "operator directly followed by unary minus; parenthesize the operand",
                ));
            }
            self.pos += 1;
            self.skip_ws();
            let inner = self.unary(true)?;
            return Ok(Expr::Neg(Box::new(inner)));
        }
        self.power()
    }

    fn power(&mut self) -> std::result::Result<Expr, ParseError> {
        let base = self.atom()?;
        if self.peek() == Some(b'^') {
            self.pos += 1;
            self.skip_ws();
            self.reject_unary_after_op()?;
            let exp = self.power()?;
            return Ok(Expr::Bin(BinOp::Pow, Box::new(base), Box::new(exp)));
        }
        Ok(base)
    }

    fn atom(&mut self) -> std::result::Result<Expr, ParseError> {
        match self.peek() {
            Some(b'(') => {
                self.pos += 1;
                self.skip_ws();
                let e = self.expr(true)?;
                if !self.eat(b')') {
                    return Err(self.err("expected ')'"));
                }
                Ok(e)
            }
            Some(c) if c.is_ascii_digit() => self.number(),
            Some(c) if c.is_ascii_alphabetic() || c == b'_' => self.ident(),
            Some(c) => Err(self.err(format!(
                "expected a number, variable, function or '(' but found '{}'",
                c as char
            ))),
            None => Err(self.err("unexpected end of input; expected an operand")),
        }
    }

    fn number(&mut self) -> std::result::Result<Expr, ParseError> {
        let start = self.pos;
        while self.peek().is_some_and(|c| c.is_ascii_digit()) {
            self.pos += 1;
        }
        if self.peek() == Some(b'.') {
            self.pos += 1;
            if !self.peek().is_some_and(|c| c.is_ascii_digit()) {
                return Err(self.err("expected digits after decimal point"));
            }
            while self.peek().is_some_and(|c| c.is_ascii_digit()) {
                self.pos += 1;
            }
        }
        if matches!(self.peek(), Some(b'e') | Some(b'E')) {
            let mark = self.pos;
            self.pos += 1;
            if matches!(self.peek(), Some(b'+') | Some(b'-')) {
                self.pos += 1;
            }
            if self.peek().is_some_and(|c| c.is_ascii_digit()) {
                while self.peek().is_some_and(|c| c.is_ascii_digit()) {
                    self.pos += 1;
                }
            } else {
                // "2e" starts an identifier-like tail; treat the 'e' as not
                // part of the number and let the caller fail on it.
                self.pos = mark;
            }
        }
        let text = std::str::from_utf8(&self.src[start..self.pos]).unwrap();
        let value: f64 = text.parse().map_err(|_| ParseError {
            offset: start,
            message: format!("invalid number literal '{text}'"),
        })?;
        self.skip_ws();
        Ok(Expr::Num(value))
    }

    fn ident(&mut self) -> std::result::Result<Expr, ParseError> {
        let start = self.pos;
        while self
            .peek()
            .is_some_and(|c| c.is_ascii_alphanumeric() || c == b'_')
        {
            self.pos += 1;
        }
        let name = std::str::from_utf8(&self.src[start..self.pos]).unwrap();
        self.skip_ws();
        match name {
            "x" => return Ok(Expr::Var(Var::X)),
            "y" => return Ok(Expr::Var(Var::Y)),
            "z" => return Ok(Expr::Var(Var::Z)),
            "pi" => return Ok(Expr::Pi),
            _ => {}
        }
        if let Some(func) = Func::from_name(name) {
            if !self.eat(b'(') {
                return Err(self.err(format!("expected '(' after function '{name}'")));
            }
            let mut args = vec![self.expr(true)?];
            while self.eat(b',') {
                args.push(self.expr(true)?);
            }
            if !self.eat(b')') {
                return Err(self.err("expected ')' or ','"));
            }
            if args.len() != func.arity() {
                return Err(ParseError {
                    offset: start,
                    message: format!(
                        "function '{name}' takes {} argument(s), got {}",
                        func.arity(),
                        args.len()
                    ),
                });
            }
            return Ok(Expr::Call(func, args));
        }
        Err(ParseError {
            offset: start,
            message: format!("unknown identifier '{name}'"),
        })
    }
}

impl Expr {
    pub fn eval(&self, bind: &Bind) -> Result<f64> {
        let v = self.eval_inner(bind)?;
        if !v.is_finite() {
            return Err(Error::eval(format!(
                "non-finite result {v} from '{self}' at {}",
                bind.describe()
            )));
        }
        Ok(v)
    }

    fn eval_inner(&self, bind: &Bind) -> Result<f64> {
        let fail = |what: &str| -> Error {
            Error::eval(format!("{what} in '{self}' at {}", bind.describe()))
        };
        Ok(match self {
            Expr::Num(v) => *v,
            Expr::Pi => std::f64::consts::PI,
            Expr::Var(v) => bind
                .get(*v)
                .ok_or_else(|| fail(&format!("variable '{}' is not bound", v.name())))?,
            Expr::Neg(e) => -e.eval_inner(bind)?,
            Expr::Bin(op, l, r) => {
                let a = l.eval_inner(bind)?;
                let b = r.eval_inner(bind)?;
                match op {
                    BinOp::Add => a + b,
                    BinOp::Sub => a - b,
                    BinOp::Mul => a * b,
                    BinOp::Div => {
                        if b == 0.0 {
                            return Err(fail("division by zero"));
                        }
                        a / b
                    }
                    BinOp::Pow => {
                        let v = a.powf(b);
                        if v.is_nan() {
                            return Err(fail(&format!("invalid power {a}^{b}")));
                        }
                        v
                    }
                }
            }
            Expr::Call(f, args) => {
                let a = args[0].eval_inner(bind)?;
                match f {
                    Func::Sin => a.sin(),
                    Func::Cos => a.cos(),
                    Func::Exp => a.exp(),
                    Func::Log => {
                        if a <= 0.0 {
                            return Err(fail(&format!("log of non-positive value {a}")));
                        }
                        a.ln()
                    }
                    Func::Sqrt => {
                        if a < 0.0 {
                            return Err(fail(&format!("sqrt of negative value {a}")));
                        }
                        a.sqrt()
                    }
                    Func::Abs => a.abs(),
                    Func::Min => a.min(args[1].eval_inner(bind)?),
                    Func::Max => a.max(args[1].eval_inner(bind)?),
                }
            }
        })
    }

    fn prec(&self) -> u8 {
        match self {
            Expr::Bin(BinOp::Add | BinOp::Sub, ..) => 1,
            Expr::Bin(BinOp::Mul | BinOp::Div, ..) => 2,
            Expr::Neg(_) => 3,
            Expr::Bin(BinOp::Pow, ..) => 4,
            _ => 5,
        }
    }
}

/// Minimal-parenthesis printer. The printed form reparses to a structurally
/// identical tree; in particular any negation in an operand position is
/// parenthesized because the grammar forbids `op -`.
impl fmt::Display for Expr {
    fn fmt(&self, out: &mut fmt::Formatter<'_>) -> fmt::Result {
        fn wrap(out: &mut fmt::Formatter<'_>, e: &Expr, parens: bool) -> fmt::Result {
            if parens {
                write!(out, "({e})")
            } else {
                write!(out, "{e}")
            }
        }
        match self {
            Expr::Num(v) => write!(out, "{v}"),
            Expr::Pi => write!(out, "pi"),
            Expr::Var(v) => write!(out, "{}", v.name()),
            Expr::Neg(e) => {
                write!(out, "-")?;
                wrap(out, e, e.prec() < 3)
            }
            Expr::Bin(op, l, r) => {
                let (sym, p) = match op {
                    BinOp::Add => ("+", 1),
                    BinOp::Sub => ("-", 1),
                    BinOp::Mul => ("*", 2),
                    BinOp::Div => ("/", 2),
                    BinOp::Pow => ("^", 4),
                };
                if *op == BinOp::Pow {
                    // Right associative: parenthesize an exponentiation base.
                    wrap(out, l, l.prec() <= p)?;
                    write!(out, "{sym}")?;
                    wrap(out, r, r.prec() < p || matches!(**r, Expr::Neg(_)))
                } else {
                    wrap(out, l, l.prec() < p)?;
                    write!(out, "{sym}")?;
                    wrap(out, r, r.prec() <= p || matches!(**r, Expr::Neg(_)))
                }
            }
            Expr::Call(f, args) => {
                write!(out, "{}(", f.name())?;
                for (k, a) in args.iter().enumerate() {
                    if k > 0 {
                        write!(out, ",")?;
                    }
                    write!(out, "{a}")?;
                }
                write!(out, ")")
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ev(src: &str, x: f64, y: f64) -> f64 {
        parse(src).unwrap().eval(&Bind::d2(x, y)).unwrap()
    }

    #[test]
    fn precedence_and_associativity() {
        assert_eq!(ev("2^3^2", 0.0, 0.0), 512.0);
        assert_eq!(ev("-x^2", 3.0, 0.0), -9.0);
        assert_eq!(ev("2*x^2", 3.0, 0.0), 18.0);
        assert_eq!(ev("100/10/5", 0.0, 0.0), 2.0);
        assert_eq!(ev("1-2-3", 0.0, 0.0), -4.0);
        assert_eq!(ev("-x*y", 2.0, 5.0), -10.0);
        assert_eq!(ev("(-x)^2", 3.0, 0.0), 9.0);
    }

    #[test]
    fn obstacle_expression() {
        let e = parse("max(0, 1 - x^2 - y^2)").unwrap();
        assert_eq!(e.eval(&Bind::d2(0.0, 0.0)).unwrap(), 1.0);
        assert_eq!(e.eval(&Bind::d2(2.0, 0.0)).unwrap(), 0.0);
    }

    #[test]
    fn unary_minus_after_operator_rejected() {
        let err = parse("2*-x").unwrap_err();
        assert_eq!(err.offset, 2);
        assert!(err.message.contains("unary minus"));
        assert!(parse("2*(-x)").is_ok());
        assert!(parse("x + -y").is_err());
        assert!(parse("x^-2").is_err());
        assert!(parse("min(x, -y)").is_ok());
    }

    #[test]
    fn unclosed_paren_offset() {
        let err = parse("sin(x").unwrap_err();
        assert_eq!(err.offset, 5);
        assert!(err.message.contains("')'"));
    }

    #[test]
    fn unknown_identifier() {
        let err = parse("2*w").unwrap_err();
        assert_eq!(err.offset, 2);
        assert!(err.message.contains("unknown identifier 'w'"));
    }

    #[test]
    fn arity_checked() {
        assert!(parse("min(x)").is_err());
        assert!(parse("sin(x, y)").is_err());
    }

    #[test]
    fn eval_domain_errors() {
        let e = parse("1/(x-x)").unwrap();
        let err = e.eval(&Bind::d1(3.0)).unwrap_err();
        assert!(err.to_string().contains("division by zero"));
        assert!(err.to_string().contains("x=3"));

        assert!(parse("log(x)").unwrap().eval(&Bind::d1(0.0)).is_err());
        assert!(parse("sqrt(x)").unwrap().eval(&Bind::d1(-1.0)).is_err());
        assert!(parse("exp(x)").unwrap().eval(&Bind::d1(1.0e4)).is_err());
        assert!(parse("x^x").unwrap().eval(&Bind::d1(-0.5)).is_err());
    }

    #[test]
    fn unbound_variable_is_an_error() {
        let e = parse("y").unwrap();
        assert!(e.eval(&Bind::d1(1.0)).is_err());
        assert!(e.eval(&Bind::d2(1.0, 2.0)).is_ok());
    }

    #[test]
    fn print_parse_round_trip() {
        let corpus = [
            "0",
            "1.5",
            "2.5e-3",
            "x",
            "pi",
            "x+y",
            "x-y-1",
            "x*y+z",
            "x*(y+z)",
            "x/y/z",
            "x/(y/z)",
            "2^3^2",
            "(2^3)^2",
            "-x",
            "-(x+y)",
            "-x^2",
            "(-x)^2",
            "-x*y",
            "x*(-y)",
            "sin(x)",
            "cos(pi*x)",
            "exp(-(x^2))",
            "log(1+x^2)",
            "sqrt(1+x^2+y^2)",
            "abs(x-1/2)",
            "min(x, y)",
            "max(0, 1-x^2)",
            "max(min(x, y), -(x*y))",
            "1/2-x^2",
            "0.125",
            "((x))",
            "sin(cos(exp(x)))",
            "x^2+y^2-2*x*y",
            "(x+y)^(x-y)",
            "2*pi*x",
            "x*2",
            "1e3*x",
            "1.5E-2+x",
            "sqrt(abs(x))",
            "min(1, max(0, x))",
            "x-(y-z)",
            "(x-y)-z",
            "x^(y^z)",
            "x*y/z",
            "x/(y*z)",
            "-(x)",
            "-(-x)",
            "pi^2",
            "sin(x)^2+cos(x)^2",
            "max(x, 0)^2/2",
            "(1+4*x^2)^(3/2)",
            "2/(1+4*x^2)^1.5",
        ];
        for src in corpus {
            let first = parse(src).unwrap_or_else(|e| panic!("{src}: {e}"));
            let printed = first.to_string();
            let second = parse(&printed)
                .unwrap_or_else(|e| panic!("printed form '{printed}' of '{src}': {e}"));
            assert_eq!(first, second, "round trip changed '{src}' -> '{printed}'");
        }
    }
}
