//! Closed-form scalar expressions in `x1..x3`.
//!
//! The grammar is small on purpose: numbers, `pi`, the variables `x1`, `x2`,
//! `x3` (aliases `x`, `y`, `z`), `+ - * / ^` (integer exponents), and the
//! functions `cos`, `sin`, `exp`, `abs` and `dist(p1, .., pn)` = |x - p|.
//! Gradients are evaluated in forward mode, so every accepted expression
//! comes with an exact (a.e.) gradient.

use crate::error::{Error, Result};
use std::fmt;

#[derive(Debug, Clone, PartialEq)]
enum Node {
    Num(f64),
    Var(usize),
    Neg(Box<Node>),
    Add(Box<Node>, Box<Node>),
    Sub(Box<Node>, Box<Node>),
    Mul(Box<Node>, Box<Node>),
    Div(Box<Node>, Box<Node>),
    Pow(Box<Node>, i32),
    Cos(Box<Node>),
    Sin(Box<Node>),
    Exp(Box<Node>),
    Abs(Box<Node>),
    Dist(Vec<f64>),
}

/// A parsed expression together with its source text.
#[derive(Debug, Clone, PartialEq)]
pub struct Expr {
    root: Node,
    source: String,
}

#[derive(Clone, Copy)]
struct Dual {
    v: f64,
    d: [f64; 3],
}

impl Dual {
    fn constant(v: f64) -> Self {
        Dual { v, d: [0.0; 3] }
    }
    fn scale_d(self, s: f64) -> [f64; 3] {
        [self.d[0] * s, self.d[1] * s, self.d[2] * s]
    }
}

impl Expr {
    pub fn parse(text: &str) -> Result<Self> {
        let tokens = tokenize(text)?;
        let mut p = Parser { tokens, pos: 0 };
        let root = p.expr()?;
        if p.pos != p.tokens.len() {
            return Err(Error::Syntax(format!("trailing input in expression `{text}`")));
        }
        Ok(Expr { root, source: text.trim().to_string() })
    }

    pub fn constant(v: f64) -> Self {
        Expr { root: Node::Num(v), source: format!("{v}") }
    }

    pub fn source(&self) -> &str {
        &self.source
    }

    /// Highest variable index used (1-based), 0 for constants.
    pub fn max_var(&self) -> usize {
        fn walk(n: &Node) -> usize {
            match n {
                Node::Num(_) => 0,
                Node::Var(i) => i + 1,
                Node::Dist(p) => p.len(),
                Node::Neg(a) | Node::Pow(a, _) | Node::Cos(a) | Node::Sin(a) | Node::Exp(a) | Node::Abs(a) => walk(a),
                Node::Add(a, b) | Node::Sub(a, b) | Node::Mul(a, b) | Node::Div(a, b) => walk(a).max(walk(b)),
            }
        }
        walk(&self.root)
    }

    /// Polynomial degree, or `None` when the expression is not a polynomial.
    pub fn polynomial_degree(&self) -> Option<u32> {
        fn deg(n: &Node) -> Option<u32> {
            match n {
                Node::Num(_) => Some(0),
                Node::Var(_) => Some(1),
                Node::Neg(a) => deg(a),
                Node::Add(a, b) | Node::Sub(a, b) => Some(deg(a)?.max(deg(b)?)),
                Node::Mul(a, b) => Some(deg(a)? + deg(b)?),
                Node::Div(a, b) => match deg(b)? {
                    0 => deg(a),
                    _ => None,
                },
                Node::Pow(a, k) if *k >= 0 => Some(deg(a)? * (*k as u32)),
                _ => None,
            }
        }
        deg(&self.root)
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        self.eval_dual(x).v
    }

    /// Value and gradient (length `n`) at `x`.
    pub fn eval_with_grad(&self, x: &[f64], n: usize) -> (f64, Vec<f64>) {
        let d = self.eval_dual(x);
        (d.v, d.d[..n].to_vec())
    }

    pub fn grad(&self, x: &[f64], n: usize) -> Vec<f64> {
        self.eval_with_grad(x, n).1
    }

    /// Checked evaluation: non-finite values become [`Error::Eval`].
    pub fn try_eval(&self, x: &[f64]) -> Result<f64> {
        let v = self.eval(x);
        if v.is_finite() {
            Ok(v)
        } else {
            Err(Error::Eval(format!("`{}` is not finite at {:?}", self.source, x)))
        }
    }

    fn eval_dual(&self, x: &[f64]) -> Dual {
        fn go(n: &Node, x: &[f64]) -> Dual {
            match n {
                Node::Num(c) => Dual::constant(*c),
                Node::Var(i) => {
                    let mut d = [0.0; 3];
                    d[*i] = 1.0;
                    Dual { v: x.get(*i).copied().unwrap_or(0.0), d }
                }
                Node::Neg(a) => {
                    let a = go(a, x);
                    Dual { v: -a.v, d: a.scale_d(-1.0) }
                }
                Node::Add(a, b) => {
                    let (a, b) = (go(a, x), go(b, x));
                    Dual { v: a.v + b.v, d: std::array::from_fn(|k| a.d[k] + b.d[k]) }
                }
                Node::Sub(a, b) => {
                    let (a, b) = (go(a, x), go(b, x));
                    Dual { v: a.v - b.v, d: std::array::from_fn(|k| a.d[k] - b.d[k]) }
                }
                Node::Mul(a, b) => {
                    let (a, b) = (go(a, x), go(b, x));
                    Dual { v: a.v * b.v, d: std::array::from_fn(|k| a.d[k] * b.v + a.v * b.d[k]) }
                }
                Node::Div(a, b) => {
                    let (a, b) = (go(a, x), go(b, x));
                    let inv = 1.0 / b.v;
                    Dual {
                        v: a.v * inv,
                        d: std::array::from_fn(|k| (a.d[k] * b.v - a.v * b.d[k]) * inv * inv),
                    }
                }
                Node::Pow(a, k) => {
                    let a = go(a, x);
                    let v = a.v.powi(*k);
                    let s = if *k == 0 { 0.0 } else { f64::from(*k) * a.v.powi(k - 1) };
                    Dual { v, d: a.scale_d(s) }
                }
                Node::Cos(a) => {
                    let a = go(a, x);
                    Dual { v: a.v.cos(), d: a.scale_d(-a.v.sin()) }
                }
                Node::Sin(a) => {
                    let a = go(a, x);
                    Dual { v: a.v.sin(), d: a.scale_d(a.v.cos()) }
                }
                Node::Exp(a) => {
                    let a = go(a, x);
                    let e = a.v.exp();
                    Dual { v: e, d: a.scale_d(e) }
                }
                Node::Abs(a) => {
                    let a = go(a, x);
                    let s = if a.v > 0.0 { 1.0 } else if a.v < 0.0 { -1.0 } else { 0.0 };
                    Dual { v: a.v.abs(), d: a.scale_d(s) }
                }
                Node::Dist(p) => {
                    let mut r2 = 0.0;
                    let mut diff = [0.0; 3];
                    for (k, pk) in p.iter().enumerate() {
                        diff[k] = x.get(k).copied().unwrap_or(0.0) - pk;
                        r2 += diff[k] * diff[k];
                    }
                    let r = r2.sqrt();
                    let d = if r > 0.0 { std::array::from_fn(|k| diff[k] / r) } else { [0.0; 3] };
                    Dual { v: r, d }
                }
            }
        }
        go(&self.root, x)
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.source)
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Num(f64),
    Ident(String),
    Op(char),
}

fn tokenize(text: &str) -> Result<Vec<Tok>> {
    let chars: Vec<char> = text.chars().collect();
    let mut out = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        if c.is_whitespace() {
            i += 1;
        } else if c.is_ascii_digit() || c == '.' {
            let start = i;
            while i < chars.len() && (chars[i].is_ascii_digit() || chars[i] == '.') {
                i += 1;
            }
            if i < chars.len() && (chars[i] == 'e' || chars[i] == 'E') {
                let save = i;
                i += 1;
                if i < chars.len() && (chars[i] == '+' || chars[i] == '-') {
                    i += 1;
                }
                if i < chars.len() && chars[i].is_ascii_digit() {
                    while i < chars.len() && chars[i].is_ascii_digit() {
                        i += 1;
                    }
                } else {
                    i = save;
                }
            }
            let s: String = chars[start..i].iter().collect();
            let v = s.parse::<f64>().map_err(|_| Error::Syntax(format!("bad number `{s}`")))?;
            out.push(Tok::Num(v));
        } else if c.is_ascii_alphabetic() || c == '_' {
            let start = i;
            while i < chars.len() && (chars[i].is_ascii_alphanumeric() || chars[i] == '_') {
                i += 1;
            }
            out.push(Tok::Ident(chars[start..i].iter().collect()));
        } else if "+-*/^(),".contains(c) {
            out.push(Tok::Op(c));
            i += 1;
        } else {
            return Err(Error::Syntax(format!("unexpected character `{c}` in `{text}`")));
        }
    }
    Ok(out)
}

struct Parser {
    tokens: Vec<Tok>,
    pos: usize,
}

impl Parser {
    fn peek(&self) -> Option<&Tok> {
        self.tokens.get(self.pos)
    }

    fn eat(&mut self, op: char) -> bool {
        if self.peek() == Some(&Tok::Op(op)) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn expect(&mut self, op: char) -> Result<()> {
        if self.eat(op) {
            Ok(())
        } else {
            Err(Error::Syntax(format!("expected `{op}`")))
        }
    }

    fn expr(&mut self) -> Result<Node> {
        let mut lhs = self.term()?;
        loop {
            if self.eat('+') {
                lhs = Node::Add(Box::new(lhs), Box::new(self.term()?));
            } else if self.eat('-') {
                lhs = Node::Sub(Box::new(lhs), Box::new(self.term()?));
            } else {
                return Ok(lhs);
            }
        }
    }

    fn term(&mut self) -> Result<Node> {
        let mut lhs = self.unary()?;
        loop {
            if self.eat('*') {
                lhs = Node::Mul(Box::new(lhs), Box::new(self.unary()?));
            } else if self.eat('/') {
                lhs = Node::Div(Box::new(lhs), Box::new(self.unary()?));
            } else {
                return Ok(lhs);
            }
        }
    }

    fn unary(&mut self) -> Result<Node> {
        if self.eat('-') {
            return Ok(Node::Neg(Box::new(self.unary()?)));
        }
        if self.eat('+') {
            return self.unary();
        }
        self.power()
    }

    fn power(&mut self) -> Result<Node> {
        let base = self.atom()?;
        if self.eat('^') {
            let neg = self.eat('-');
            match self.tokens.get(self.pos).cloned() {
                Some(Tok::Num(v)) if v.fract() == 0.0 && v.abs() < 64.0 => {
                    self.pos += 1;
                    let k = if neg { -(v as i32) } else { v as i32 };
                    Ok(Node::Pow(Box::new(base), k))
                }
                _ => Err(Error::Syntax("exponent must be an integer literal".into())),
            }
        } else {
            Ok(base)
        }
    }

    fn atom(&mut self) -> Result<Node> {
        match self.tokens.get(self.pos).cloned() {
            Some(Tok::Num(v)) => {
                self.pos += 1;
                Ok(Node::Num(v))
            }
            Some(Tok::Op('(')) => {
                self.pos += 1;
                let e = self.expr()?;
                self.expect(')')?;
                Ok(e)
            }
            Some(Tok::Ident(name)) => {
                self.pos += 1;
                match name.as_str() {
                    "pi" => Ok(Node::Num(std::f64::consts::PI)),
                    "x" | "x1" => Ok(Node::Var(0)),
                    "y" | "x2" => Ok(Node::Var(1)),
                    "z" | "x3" => Ok(Node::Var(2)),
                    "cos" | "sin" | "exp" | "abs" => {
                        self.expect('(')?;
                        let a = Box::new(self.expr()?);
                        self.expect(')')?;
                        Ok(match name.as_str() {
                            "cos" => Node::Cos(a),
                            "sin" => Node::Sin(a),
                            "exp" => Node::Exp(a),
                            _ => Node::Abs(a),
                        })
                    }
                    "dist" => {
                        self.expect('(')?;
                        let mut p = Vec::new();
                        loop {
                            let e = self.expr()?;
                            let v = constant_value(&e)
                                .ok_or_else(|| Error::Syntax("dist() takes constant coordinates".into()))?;
                            p.push(v);
                            if !self.eat(',') {
                                break;
                            }
                        }
                        self.expect(')')?;
                        if p.is_empty() || p.len() > 3 {
                            return Err(Error::Syntax("dist() takes 1 to 3 coordinates".into()));
                        }
                        Ok(Node::Dist(p))
                    }
                    other => Err(Error::Syntax(format!("unknown identifier `{other}`"))),
                }
            }
            other => Err(Error::Syntax(format!("unexpected token {other:?}"))),
        }
    }
}

fn constant_value(n: &Node) -> Option<f64> {
    match n {
        Node::Num(v) => Some(*v),
        Node::Neg(a) => constant_value(a).map(|v| -v),
        Node::Add(a, b) => Some(constant_value(a)? + constant_value(b)?),
        Node::Sub(a, b) => Some(constant_value(a)? - constant_value(b)?),
        Node::Mul(a, b) => Some(constant_value(a)? * constant_value(b)?),
        Node::Div(a, b) => Some(constant_value(a)? / constant_value(b)?),
        _ => None,
    }
}
