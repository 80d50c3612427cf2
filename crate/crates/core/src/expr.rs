//! Expressions for `f(t, u, p)` with `p = u_x`: a recursive-descent parser,
//! symbolic partial derivatives, a periodicity check on explicit `t`
//! dependence and a structural parity test in `p`.

use std::f64::consts::{PI, TAU};
use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::stepper::Nonlinearity;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Var {
    T,
    U,
    P,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Func {
    Sin,
    Cos,
    Exp,
    Tanh,
    /// Only produced by differentiation of `a^c` with variable exponent.
    Ln,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Num(f64),
    Var(Var),
    Neg(Box<Expr>),
    Add(Box<Expr>, Box<Expr>),
    Sub(Box<Expr>, Box<Expr>),
    Mul(Box<Expr>, Box<Expr>),
    Div(Box<Expr>, Box<Expr>),
    Pow(Box<Expr>, Box<Expr>),
    Call(Func, Box<Expr>),
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Num(f64),
    Ident(String),
    Op(char),
}

fn tokenize(src: &str) -> Result<Vec<(usize, Tok)>> {
    let bytes = src.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i] as char;
        if c.is_ascii_whitespace() {
            i += 1;
        } else if c.is_ascii_digit() || c == '.' {
            let start = i;
            while i < bytes.len() && (bytes[i].is_ascii_digit() || bytes[i] == b'.') {
                i += 1;
            }
            if i < bytes.len() && (bytes[i] == b'e' || bytes[i] == b'E') {
                let mut j = i + 1;
                if j < bytes.len() && (bytes[j] == b'+' || bytes[j] == b'-') {
                    j += 1;
                }
                if j < bytes.len() && bytes[j].is_ascii_digit() {
                    i = j;
                    while i < bytes.len() && bytes[i].is_ascii_digit() {
                        i += 1;
                    }
                }
            }
            let text = &src[start..i];
            let v: f64 = text.parse().map_err(|_| Error::Parse {
                position: start,
                message: format!("malformed number '{text}'"),
            })?;
            out.push((start, Tok::Num(v)));
        } else if c.is_ascii_alphabetic() || c == '_' {
            let start = i;
            while i < bytes.len() && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_') {
                i += 1;
            }
            out.push((start, Tok::Ident(src[start..i].to_string())));
        } else if "+-*/^()".contains(c) {
            out.push((i, Tok::Op(c)));
            i += 1;
        } else {
            return Err(Error::Parse {
                position: i,
                message: format!("unexpected character '{c}'"),
            });
        }
    }
    Ok(out)
}

struct Parser {
    toks: Vec<(usize, Tok)>,
    pos: usize,
    len: usize,
    period: f64,
}

impl Parser {
    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.pos).map(|t| &t.1)
    }

    fn here(&self) -> usize {
        self.toks.get(self.pos).map_or(self.len, |t| t.0)
    }

    fn err<T>(&self, message: impl Into<String>) -> Result<T> {
        Err(Error::Parse {
            position: self.here(),
            message: message.into(),
        })
    }

    fn eat(&mut self, op: char) -> bool {
        if self.peek() == Some(&Tok::Op(op)) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn expr(&mut self) -> Result<Expr> {
        let mut lhs = self.term()?;
        loop {
            if self.eat('+') {
                lhs = Expr::Add(Box::new(lhs), Box::new(self.term()?));
            } else if self.eat('-') {
                lhs = Expr::Sub(Box::new(lhs), Box::new(self.term()?));
            } else {
                return Ok(lhs);
            }
        }
    }

    fn term(&mut self) -> Result<Expr> {
        let mut lhs = self.unary()?;
        loop {
            if self.eat('*') {
                lhs = Expr::Mul(Box::new(lhs), Box::new(self.unary()?));
            } else if self.eat('/') {
                lhs = Expr::Div(Box::new(lhs), Box::new(self.unary()?));
            } else {
                return Ok(lhs);
            }
        }
    }

    fn unary(&mut self) -> Result<Expr> {
        if self.eat('-') {
            return Ok(Expr::Neg(Box::new(self.unary()?)));
        }
        if self.eat('+') {
            return self.unary();
        }
        self.power()
    }

    fn power(&mut self) -> Result<Expr> {
        let base = self.atom()?;
        if self.eat('^') {
            let exp = self.unary()?;
            return Ok(Expr::Pow(Box::new(base), Box::new(exp)));
        }
        Ok(base)
    }

    fn atom(&mut self) -> Result<Expr> {
        let Some(tok) = self.peek().cloned() else {
            return self.err("unexpected end of expression");
        };
        match tok {
            Tok::Num(v) => {
                self.pos += 1;
                Ok(Expr::Num(v))
            }
            Tok::Op('(') => {
                self.pos += 1;
                let e = self.expr()?;
                if !self.eat(')') {
                    return self.err("expected ')'");
                }
                Ok(e)
            }
            Tok::Ident(name) => {
                let at = self.here();
                self.pos += 1;
                let func = match name.as_str() {
                    "t" => return Ok(Expr::Var(Var::T)),
                    "u" => return Ok(Expr::Var(Var::U)),
                    "p" => return Ok(Expr::Var(Var::P)),
                    "T" => return Ok(Expr::Num(self.period)),
                    "pi" => return Ok(Expr::Num(PI)),
                    "sin" => Func::Sin,
                    "cos" => Func::Cos,
                    "exp" => Func::Exp,
                    "tanh" => Func::Tanh,
                    _ => {
                        return Err(Error::Parse {
                            position: at,
                            message: format!("unknown identifier '{name}'"),
                        })
                    }
                };
                if !self.eat('(') {
                    return self.err(format!("expected '(' after '{name}'"));
                }
                let arg = self.expr()?;
                if !self.eat(')') {
                    return self.err("expected ')'");
                }
                Ok(Expr::Call(func, Box::new(arg)))
            }
            Tok::Op(c) => self.err(format!("unexpected '{c}'")),
        }
    }
}

/// Parses `src`, binding the symbol `T` to `period`.
pub fn parse(src: &str, period: f64) -> Result<Expr> {
    let toks = tokenize(src)?;
    let mut p = Parser {
        toks,
        pos: 0,
        len: src.len(),
        period,
    };
    let e = p.expr()?;
    if p.pos < p.toks.len() {
        return p.err("unexpected trailing input");
    }
    Ok(e)
}

fn num(v: f64) -> Expr {
    Expr::Num(v)
}

fn b(e: Expr) -> Box<Expr> {
    Box::new(e)
}

fn add(x: Expr, y: Expr) -> Expr {
    match (&x, &y) {
        (Expr::Num(a), Expr::Num(c)) => num(a + c),
        (Expr::Num(a), _) if *a == 0.0 => y,
        (_, Expr::Num(c)) if *c == 0.0 => x,
        _ => Expr::Add(b(x), b(y)),
    }
}

fn sub(x: Expr, y: Expr) -> Expr {
    match (&x, &y) {
        (Expr::Num(a), Expr::Num(c)) => num(a - c),
        (_, Expr::Num(c)) if *c == 0.0 => x,
        (Expr::Num(a), _) if *a == 0.0 => neg(y),
        _ => Expr::Sub(b(x), b(y)),
    }
}

fn mul(x: Expr, y: Expr) -> Expr {
    match (&x, &y) {
        (Expr::Num(a), Expr::Num(c)) => num(a * c),
        (Expr::Num(a), _) | (_, Expr::Num(a)) if *a == 0.0 => num(0.0),
        (Expr::Num(a), _) if *a == 1.0 => y,
        (_, Expr::Num(c)) if *c == 1.0 => x,
        _ => Expr::Mul(b(x), b(y)),
    }
}

fn div(x: Expr, y: Expr) -> Expr {
    match (&x, &y) {
        (Expr::Num(a), Expr::Num(c)) => num(a / c),
        (Expr::Num(a), _) if *a == 0.0 => num(0.0),
        (_, Expr::Num(c)) if *c == 1.0 => x,
        _ => Expr::Div(b(x), b(y)),
    }
}

fn neg(x: Expr) -> Expr {
    match x {
        Expr::Num(a) => num(-a),
        Expr::Neg(inner) => *inner,
        other => Expr::Neg(b(other)),
    }
}

fn pow(x: Expr, y: Expr) -> Expr {
    match (&x, &y) {
        (Expr::Num(a), Expr::Num(c)) => num(a.powf(*c)),
        (_, Expr::Num(c)) if *c == 1.0 => x,
        (_, Expr::Num(c)) if *c == 0.0 => num(1.0),
        _ => Expr::Pow(b(x), b(y)),
    }
}

fn call(f: Func, x: Expr) -> Expr {
    match x {
        Expr::Num(a) => num(apply(f, a)),
        other => Expr::Call(f, b(other)),
    }
}

fn apply(f: Func, x: f64) -> f64 {
    match f {
        Func::Sin => x.sin(),
        Func::Cos => x.cos(),
        Func::Exp => x.exp(),
        Func::Tanh => x.tanh(),
        Func::Ln => x.ln(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Parity {
    Even,
    Odd,
    Neither,
}

impl Expr {
    pub fn eval(&self, t: f64, u: f64, p: f64) -> f64 {
        match self {
            Expr::Num(v) => *v,
            Expr::Var(Var::T) => t,
            Expr::Var(Var::U) => u,
            Expr::Var(Var::P) => p,
            Expr::Neg(a) => -a.eval(t, u, p),
            Expr::Add(a, c) => a.eval(t, u, p) + c.eval(t, u, p),
            Expr::Sub(a, c) => a.eval(t, u, p) - c.eval(t, u, p),
            Expr::Mul(a, c) => a.eval(t, u, p) * c.eval(t, u, p),
            Expr::Div(a, c) => a.eval(t, u, p) / c.eval(t, u, p),
            Expr::Pow(a, c) => {
                let base = a.eval(t, u, p);
                match c.as_ref() {
                    Expr::Num(n) if n.fract() == 0.0 && n.abs() < 64.0 => base.powi(*n as i32),
                    other => base.powf(other.eval(t, u, p)),
                }
            }
            Expr::Call(f, a) => apply(*f, a.eval(t, u, p)),
        }
    }

    pub fn depends_on(&self, v: Var) -> bool {
        match self {
            Expr::Num(_) => false,
            Expr::Var(w) => *w == v,
            Expr::Neg(a) | Expr::Call(_, a) => a.depends_on(v),
            Expr::Add(a, c) | Expr::Sub(a, c) | Expr::Mul(a, c) | Expr::Div(a, c) | Expr::Pow(a, c) => {
                a.depends_on(v) || c.depends_on(v)
            }
        }
    }

    fn is_constant(&self) -> bool {
        !self.depends_on(Var::T) && !self.depends_on(Var::U) && !self.depends_on(Var::P)
    }

    /// Symbolic partial derivative.
    pub fn derivative(&self, v: Var) -> Expr {
        if !self.depends_on(v) {
            return num(0.0);
        }
        match self {
            Expr::Num(_) => num(0.0),
            Expr::Var(w) => num(if *w == v { 1.0 } else { 0.0 }),
            Expr::Neg(a) => neg(a.derivative(v)),
            Expr::Add(a, c) => add(a.derivative(v), c.derivative(v)),
            Expr::Sub(a, c) => sub(a.derivative(v), c.derivative(v)),
            Expr::Mul(a, c) => add(
                mul(a.derivative(v), (**c).clone()),
                mul((**a).clone(), c.derivative(v)),
            ),
            Expr::Div(a, c) => div(
                sub(
                    mul(a.derivative(v), (**c).clone()),
                    mul((**a).clone(), c.derivative(v)),
                ),
                pow((**c).clone(), num(2.0)),
            ),
            Expr::Pow(a, c) if !c.depends_on(v) => mul(
                mul((**c).clone(), pow((**a).clone(), sub((**c).clone(), num(1.0)))),
                a.derivative(v),
            ),
            Expr::Pow(a, c) => {
                // d(a^c) = a^c (c' ln a + c a'/a)
                mul(
                    self.clone(),
                    add(
                        mul(c.derivative(v), call(Func::Ln, (**a).clone())),
                        div(mul((**c).clone(), a.derivative(v)), (**a).clone()),
                    ),
                )
            }
            Expr::Call(f, a) => {
                let inner = a.derivative(v);
                let outer = match f {
                    Func::Sin => call(Func::Cos, (**a).clone()),
                    Func::Cos => neg(call(Func::Sin, (**a).clone())),
                    Func::Exp => call(Func::Exp, (**a).clone()),
                    Func::Tanh => sub(num(1.0), pow(call(Func::Tanh, (**a).clone()), num(2.0))),
                    Func::Ln => div(num(1.0), (**a).clone()),
                };
                mul(outer, inner)
            }
        }
    }

    fn parity_in_p(&self) -> Parity {
        use Parity::*;
        match self {
            Expr::Num(_) | Expr::Var(Var::T) | Expr::Var(Var::U) => Even,
            Expr::Var(Var::P) => Odd,
            Expr::Neg(a) => a.parity_in_p(),
            Expr::Add(a, c) | Expr::Sub(a, c) => match (a.parity_in_p(), c.parity_in_p()) {
                (Even, Even) => Even,
                (Odd, Odd) => Odd,
                _ => Neither,
            },
            Expr::Mul(a, c) | Expr::Div(a, c) => match (a.parity_in_p(), c.parity_in_p()) {
                (Even, Even) | (Odd, Odd) => Even,
                (Even, Odd) | (Odd, Even) => Odd,
                _ => Neither,
            },
            Expr::Pow(a, c) => {
                let pa = a.parity_in_p();
                match (pa, c.as_ref()) {
                    (Even, _) if c.parity_in_p() == Even => Even,
                    (Odd, Expr::Num(n)) if n.fract() == 0.0 => {
                        if (*n as i64) % 2 == 0 {
                            Even
                        } else {
                            Odd
                        }
                    }
                    (_, Expr::Num(n)) if n.fract() == 0.0 && (*n as i64) % 2 == 0 && pa != Neither => Even,
                    _ => Neither,
                }
            }
            Expr::Call(f, a) => match (f, a.parity_in_p()) {
                (_, Even) => Even,
                (Func::Cos, Odd) => Even,
                (Func::Sin | Func::Tanh, Odd) => Odd,
                _ => Neither,
            },
        }
    }

    /// Whether `f(t, u, -p) = f(t, u, p)` holds structurally.
    pub fn even_in_p(&self) -> bool {
        self.parity_in_p() == Parity::Even
    }

    /// Rejects explicit `t` outside `sin`/`cos` of an affine argument whose
    /// frequency is an integer multiple of `2π / period`.
    pub fn check_periodic(&self, period: f64) -> Result<()> {
        match self {
            Expr::Var(Var::T) => Err(Error::InvalidArgument(
                "explicit t must appear only inside sin or cos of (2π/T)·k·t + c".into(),
            )),
            Expr::Num(_) | Expr::Var(_) => Ok(()),
            Expr::Call(Func::Sin | Func::Cos, a) if a.depends_on(Var::T) => {
                let slope = a.derivative(Var::T);
                if !slope.is_constant() {
                    return Err(Error::InvalidArgument("argument of sin/cos is not affine in t".into()));
                }
                let omega = slope.eval(0.0, 0.0, 0.0);
                let k = omega * period / TAU;
                if (k - k.round()).abs() > 1e-9 {
                    return Err(Error::InvalidArgument(format!(
                        "frequency {omega} is not a multiple of 2π/T (ratio {k})"
                    )));
                }
                Ok(())
            }
            Expr::Neg(a) | Expr::Call(_, a) => a.check_periodic(period),
            Expr::Add(a, c) | Expr::Sub(a, c) | Expr::Mul(a, c) | Expr::Div(a, c) | Expr::Pow(a, c) => {
                a.check_periodic(period)?;
                c.check_periodic(period)
            }
        }
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Num(v) => write!(f, "{v}"),
            Expr::Var(Var::T) => write!(f, "t"),
            Expr::Var(Var::U) => write!(f, "u"),
            Expr::Var(Var::P) => write!(f, "p"),
            Expr::Neg(a) => write!(f, "(-{a})"),
            Expr::Add(a, c) => write!(f, "({a} + {c})"),
            Expr::Sub(a, c) => write!(f, "({a} - {c})"),
            Expr::Mul(a, c) => write!(f, "({a} * {c})"),
            Expr::Div(a, c) => write!(f, "({a} / {c})"),
            Expr::Pow(a, c) => write!(f, "({a} ^ {c})"),
            Expr::Call(func, a) => {
                let name = match func {
                    Func::Sin => "sin",
                    Func::Cos => "cos",
                    Func::Exp => "exp",
                    Func::Tanh => "tanh",
                    Func::Ln => "ln",
                };
                write!(f, "{name}({a})")
            }
        }
    }
}

/// Builds a validated nonlinearity from an expression in `t`, `u`, `p`.
pub fn parse_nonlinearity(src: &str, period: f64) -> Result<Nonlinearity> {
    let e = parse(src, period)?;
    e.check_periodic(period)?;
    let dy = e.derivative(Var::U);
    let dz = e.derivative(Var::P);
    let symmetric = e.even_in_p();
    let (f, fy, fz) = (Arc::new(e), Arc::new(dy), Arc::new(dz));
    Nonlinearity::new(
        src,
        Arc::new(move |t, y, z| f.eval(t, y, z)),
        Arc::new(move |t, y, z| fy.eval(t, y, z)),
        Arc::new(move |t, y, z| fz.eval(t, y, z)),
        period,
        symmetric,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fd_check(src: &str) {
        let e = parse(src, 1.0).unwrap();
        let (dy, dz) = (e.derivative(Var::U), e.derivative(Var::P));
        let h = 1e-6;
        for i in 0..200 {
            let t = 0.37 * i as f64;
            let u = ((i * 7) % 13) as f64 / 4.0 - 1.5;
            let p = ((i * 5) % 11) as f64 / 3.0 - 1.7;
            let fy = (e.eval(t, u + h, p) - e.eval(t, u - h, p)) / (2.0 * h);
            let fz = (e.eval(t, u, p + h) - e.eval(t, u, p - h)) / (2.0 * h);
            assert!((fy - dy.eval(t, u, p)).abs() <= 1e-6 * (1.0 + fy.abs()), "{src}: {fy} vs {}", dy.eval(t, u, p));
            assert!((fz - dz.eval(t, u, p)).abs() <= 1e-6 * (1.0 + fz.abs()), "{src}");
        }
    }

    #[test]
    fn catalog_forms() {
        let e = parse("2*u - u^3", 1.0).unwrap();
        assert_eq!(e.eval(0.0, 2.0, 0.0), -4.0);
        assert_eq!(e.derivative(Var::U).eval(0.0, 2.0, 0.0), -10.0);
        assert_eq!(e.derivative(Var::P), Expr::Num(0.0));
        assert!(e.even_in_p());
        let g = parse("u - u^3 + 0.1*p", 1.0).unwrap();
        assert!(!g.even_in_p());
        assert_eq!(g.derivative(Var::P).eval(0.0, 0.3, 0.2), 0.1);
        let forced = parse("(2 + 0.5*cos(2*pi*t/T))*u - u^3", 1.0).unwrap();
        assert!(forced.check_periodic(1.0).is_ok());
        assert!((forced.eval(0.5, 1.0, 0.0) - 0.5).abs() < 1e-14);
        for src in [
            "2*u - u^3",
            "(2 + 0.5*cos(2*pi*t/T))*u - u^3",
            "u - u^3 + 0.1*p",
            "-u^3 + 0.2*cos(2*pi*t/T)",
            "tanh(u*p) + exp(-u^2)*sin(p) / (1 + u^2)",
            "(1 + u^2)^(0.5 + 0.1*p^2)",
        ] {
            fd_check(src);
        }
    }

    #[test]
    fn precedence_and_unary() {
        let e = parse("-u^2 + 2^-1 * 3 - 4/2/2", 1.0).unwrap();
        assert_eq!(e.eval(0.0, 3.0, 0.0), -9.0 + 1.5 - 1.0);
        assert_eq!(parse("2^3^2", 1.0).unwrap().eval(0.0, 0.0, 0.0), 512.0);
        assert_eq!(parse("1.5e-1*u", 1.0).unwrap().eval(0.0, 2.0, 0.0), 0.3);
    }

    #[test]
    fn parity() {
        assert!(parse("u*p^2 + cos(p)", 1.0).unwrap().even_in_p());
        assert!(parse("(u*p)^2 - p*sin(p)", 1.0).unwrap().even_in_p());
        assert!(!parse("(1 + p)^2", 1.0).unwrap().even_in_p());
        assert!(!parse("exp(p)", 1.0).unwrap().even_in_p());
    }

    #[test]
    fn errors() {
        assert!(matches!(parse("2*u +", 1.0), Err(Error::Parse { position: 5, .. })));
        assert!(matches!(parse("2*w", 1.0), Err(Error::Parse { position: 2, .. })));
        assert!(matches!(parse("sin u", 1.0), Err(Error::Parse { .. })));
        assert!(matches!(parse("(u", 1.0), Err(Error::Parse { .. })));
        assert!(matches!(parse("u # 2", 1.0), Err(Error::Parse { position: 2, .. })));
        for bad in ["t*u", "exp(t)", "cos(3*t)", "sin(t^2)"] {
            assert!(parse(bad, 1.0).unwrap().check_periodic(1.0).is_err(), "{bad}");
        }
        assert!(parse("sin(4*pi*t/T + u)", 1.0).unwrap().check_periodic(1.0).is_ok());
        assert!(matches!(parse_nonlinearity("u*exp(t)", 1.0), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn builds_nonlinearity() {
        let nl = parse_nonlinearity("(2 + 0.5*cos(2*pi*t/T))*u - u^3", 1.0).unwrap();
        assert!(nl.symmetric_in_z());
        assert!((nl.df_dy(0.0, 1.0, 0.0) - (2.5 - 3.0)).abs() < 1e-14);
        let g = parse_nonlinearity("u - u^3 + 0.1*p", 1.0).unwrap();
        assert!(!g.symmetric_in_z());
    }
}
