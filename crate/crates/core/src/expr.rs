//! Coefficient expression language (grammar version 1).
//!
//! ```text
//! expr   := term (('+' | '-') term)*
//! term   := unary (('*' | '/') unary)*
//! unary  := '-' unary | power
//! power  := atom ('^' unary)?
//! atom   := number | ident | ident '(' expr (',' expr)* ')' | '(' expr ')'
//! ```
//!
//! Identifiers: `t`, `x1` .. `x9` (spatial coordinates, 1-based), `x` (alias of
//! `x1`, only in dimension one), `r2` (squared Euclidean norm of the point),
//! `pi`, and any named scalar declared alongside the expression. Functions:
//! `exp log sqrt abs tanh sin cos min max`, and `bump(z)`, the smooth compactly
//! supported `exp(-1/(1-z²))` for `|z| < 1` and 0 otherwise.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use thiserror::Error;

pub const GRAMMAR_VERSION: u32 = 1;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ExprError {
    #[error("unexpected character '{ch}' at offset {pos} in `{src}`")]
    UnexpectedChar { src: String, ch: char, pos: usize },
    #[error("unexpected end of expression `{0}`")]
    UnexpectedEnd(String),
    #[error("unexpected token at offset {pos} in `{src}`")]
    UnexpectedToken { src: String, pos: usize },
    #[error("unknown identifier `{0}`")]
    UnknownIdent(String),
    #[error("unknown function `{0}`")]
    UnknownFunction(String),
    #[error("function `{name}` expects {expected} argument(s), got {got}")]
    Arity {
        name: String,
        expected: usize,
        got: usize,
    },
    #[error("coordinate x{index} out of range for dimension {dim}")]
    CoordinateOutOfRange { index: usize, dim: usize },
    #[error("scalar `{0}` may depend on t only")]
    ScalarDependsOnX(String),
    #[error("cyclic scalar definition involving `{0}`")]
    CyclicScalar(String),
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Func {
    Exp,
    Log,
    Sqrt,
    Abs,
    Tanh,
    Sin,
    Cos,
    Min,
    Max,
    Bump,
}

impl Func {
    fn lookup(name: &str) -> Option<(Func, usize)> {
        Some(match name {
            "exp" => (Func::Exp, 1),
            "log" => (Func::Log, 1),
            "sqrt" => (Func::Sqrt, 1),
            "abs" => (Func::Abs, 1),
            "tanh" => (Func::Tanh, 1),
            "sin" => (Func::Sin, 1),
            "cos" => (Func::Cos, 1),
            "min" => (Func::Min, 2),
            "max" => (Func::Max, 2),
            "bump" => (Func::Bump, 1),
            _ => return None,
        })
    }
}

#[derive(Debug, Clone)]
enum Node {
    Const(f64),
    Time,
    Coord(usize),
    NormSq,
    Scalar(usize),
    Neg(Box<Node>),
    Add(Box<Node>, Box<Node>),
    Sub(Box<Node>, Box<Node>),
    Mul(Box<Node>, Box<Node>),
    Div(Box<Node>, Box<Node>),
    Pow(Box<Node>, Box<Node>),
    Call(Func, Vec<Node>),
}

impl Node {
    fn eval(&self, t: f64, x: &[f64], scalars: &[f64]) -> f64 {
        match self {
            Node::Const(v) => *v,
            Node::Time => t,
            Node::Coord(i) => x[*i],
            Node::NormSq => x.iter().map(|v| v * v).sum(),
            Node::Scalar(i) => scalars[*i],
            Node::Neg(a) => -a.eval(t, x, scalars),
            Node::Add(a, b) => a.eval(t, x, scalars) + b.eval(t, x, scalars),
            Node::Sub(a, b) => a.eval(t, x, scalars) - b.eval(t, x, scalars),
            Node::Mul(a, b) => a.eval(t, x, scalars) * b.eval(t, x, scalars),
            Node::Div(a, b) => a.eval(t, x, scalars) / b.eval(t, x, scalars),
            Node::Pow(a, b) => {
                let base = a.eval(t, x, scalars);
                match **b {
                    Node::Const(e) if e == e.trunc() && e.abs() <= 64.0 => base.powi(e as i32),
                    _ => base.powf(b.eval(t, x, scalars)),
                }
            }
            Node::Call(f, args) => {
                let a = args[0].eval(t, x, scalars);
                match f {
                    Func::Exp => a.exp(),
                    Func::Log => a.ln(),
                    Func::Sqrt => a.sqrt(),
                    Func::Abs => a.abs(),
                    Func::Tanh => a.tanh(),
                    Func::Sin => a.sin(),
                    Func::Cos => a.cos(),
                    Func::Min => a.min(args[1].eval(t, x, scalars)),
                    Func::Max => a.max(args[1].eval(t, x, scalars)),
                    Func::Bump if a.abs() < 1.0 => (-1.0 / (1.0 - a * a)).exp(),
                    Func::Bump => 0.0,
                }
            }
        }
    }

    fn uses_time(&self, scalar_time: &[bool]) -> bool {
        match self {
            Node::Time => true,
            Node::Scalar(i) => scalar_time[*i],
            Node::Const(_) | Node::Coord(_) | Node::NormSq => false,
            Node::Neg(a) => a.uses_time(scalar_time),
            Node::Add(a, b) | Node::Sub(a, b) | Node::Mul(a, b) | Node::Div(a, b) | Node::Pow(a, b) => {
                a.uses_time(scalar_time) || b.uses_time(scalar_time)
            }
            Node::Call(_, args) => args.iter().any(|a| a.uses_time(scalar_time)),
        }
    }

    fn uses_space(&self) -> bool {
        match self {
            Node::Coord(_) | Node::NormSq => true,
            Node::Const(_) | Node::Time | Node::Scalar(_) => false,
            Node::Neg(a) => a.uses_space(),
            Node::Add(a, b) | Node::Sub(a, b) | Node::Mul(a, b) | Node::Div(a, b) | Node::Pow(a, b) => {
                a.uses_space() || b.uses_space()
            }
            Node::Call(_, args) => args.iter().any(Node::uses_space),
        }
    }

    fn is_zero(&self) -> bool {
        matches!(self, Node::Const(v) if *v == 0.0)
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Num(f64),
    Ident(String),
    Op(char),
}

fn lex(src: &str) -> Result<Vec<(Tok, usize)>, ExprError> {
    let bytes: Vec<char> = src.chars().collect();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i];
        if c.is_whitespace() {
            i += 1;
        } else if c.is_ascii_digit() || c == '.' {
            let start = i;
            while i < bytes.len() && (bytes[i].is_ascii_digit() || bytes[i] == '.') {
                i += 1;
            }
            if i < bytes.len() && (bytes[i] == 'e' || bytes[i] == 'E') {
                let mut j = i + 1;
                if j < bytes.len() && (bytes[j] == '+' || bytes[j] == '-') {
                    j += 1;
                }
                if j < bytes.len() && bytes[j].is_ascii_digit() {
                    i = j;
                    while i < bytes.len() && bytes[i].is_ascii_digit() {
                        i += 1;
                    }
                }
            }
            let text: String = bytes[start..i].iter().collect();
            let v = text.parse::<f64>().map_err(|_| ExprError::UnexpectedChar {
                src: src.to_string(),
                ch: c,
                pos: start,
            })?;
            out.push((Tok::Num(v), start));
        } else if c.is_ascii_alphabetic() || c == '_' {
            let start = i;
            while i < bytes.len() && (bytes[i].is_ascii_alphanumeric() || bytes[i] == '_') {
                i += 1;
            }
            out.push((Tok::Ident(bytes[start..i].iter().collect()), start));
        } else if "+-*/^(),".contains(c) {
            out.push((Tok::Op(c), i));
            i += 1;
        } else {
            return Err(ExprError::UnexpectedChar {
                src: src.to_string(),
                ch: c,
                pos: i,
            });
        }
    }
    Ok(out)
}

struct Parser<'a> {
    src: &'a str,
    toks: Vec<(Tok, usize)>,
    pos: usize,
    dim: usize,
    scalars: &'a [String],
}

impl<'a> Parser<'a> {
    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.pos).map(|(t, _)| t)
    }

    fn err_here(&self) -> ExprError {
        match self.toks.get(self.pos) {
            Some((_, p)) => ExprError::UnexpectedToken {
                src: self.src.to_string(),
                pos: *p,
            },
            None => ExprError::UnexpectedEnd(self.src.to_string()),
        }
    }

    fn eat(&mut self, op: char) -> bool {
        if self.peek() == Some(&Tok::Op(op)) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn expr(&mut self) -> Result<Node, ExprError> {
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

    fn term(&mut self) -> Result<Node, ExprError> {
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

    fn unary(&mut self) -> Result<Node, ExprError> {
        if self.eat('-') {
            let inner = self.unary()?;
            return Ok(match inner {
                Node::Const(v) => Node::Const(-v),
                other => Node::Neg(Box::new(other)),
            });
        }
        self.power()
    }

    fn power(&mut self) -> Result<Node, ExprError> {
        let base = self.atom()?;
        if self.eat('^') {
            let exp = self.unary()?;
            return Ok(Node::Pow(Box::new(base), Box::new(exp)));
        }
        Ok(base)
    }

    fn atom(&mut self) -> Result<Node, ExprError> {
        let tok = self.peek().cloned().ok_or_else(|| self.err_here())?;
        match tok {
            Tok::Num(v) => {
                self.pos += 1;
                Ok(Node::Const(v))
            }
            Tok::Op('(') => {
                self.pos += 1;
                let inner = self.expr()?;
                if !self.eat(')') {
                    return Err(self.err_here());
                }
                Ok(inner)
            }
            Tok::Ident(name) => {
                self.pos += 1;
                if self.eat('(') {
                    let (func, arity) =
                        Func::lookup(&name).ok_or_else(|| ExprError::UnknownFunction(name.clone()))?;
                    let mut args = vec![self.expr()?];
                    while self.eat(',') {
                        args.push(self.expr()?);
                    }
                    if !self.eat(')') {
                        return Err(self.err_here());
                    }
                    if args.len() != arity {
                        return Err(ExprError::Arity {
                            name,
                            expected: arity,
                            got: args.len(),
                        });
                    }
                    return Ok(Node::Call(func, args));
                }
                self.ident(&name)
            }
            Tok::Op(_) => Err(self.err_here()),
        }
    }

    fn ident(&self, name: &str) -> Result<Node, ExprError> {
        match name {
            "t" => return Ok(Node::Time),
            "pi" => return Ok(Node::Const(std::f64::consts::PI)),
            "r2" => return Ok(Node::NormSq),
            "x" if self.dim == 1 => return Ok(Node::Coord(0)),
            _ => {}
        }
        if let Some(idx) = name.strip_prefix('x').and_then(|s| s.parse::<usize>().ok()) {
            if idx == 0 || idx > self.dim {
                return Err(ExprError::CoordinateOutOfRange {
                    index: idx,
                    dim: self.dim,
                });
            }
            return Ok(Node::Coord(idx - 1));
        }
        if let Some(i) = self.scalars.iter().position(|s| s == name) {
            return Ok(Node::Scalar(i));
        }
        Err(ExprError::UnknownIdent(name.to_string()))
    }
}

fn parse_node(src: &str, dim: usize, scalars: &[String]) -> Result<Node, ExprError> {
    let toks = lex(src)?;
    let mut p = Parser {
        src,
        toks,
        pos: 0,
        dim,
        scalars,
    };
    let node = p.expr()?;
    if p.pos != p.toks.len() {
        return Err(p.err_here());
    }
    Ok(node)
}

/// Named time-dependent scalars shared by a family of expressions.
#[derive(Debug, Clone, Default)]
pub struct ScalarTable {
    names: Vec<String>,
    nodes: Vec<Node>,
    time_dependent: Vec<bool>,
}

impl ScalarTable {
    /// Scalars may reference `t` and previously declared scalars (in key order
    /// of their dependencies); cycles are rejected.
    pub fn new(defs: &BTreeMap<String, String>) -> Result<Self, ExprError> {
        let names: Vec<String> = defs.keys().cloned().collect();
        let mut parsed = Vec::with_capacity(names.len());
        for (name, src) in defs {
            let node = parse_node(src, 0, &names).map_err(|e| match e {
                ExprError::CoordinateOutOfRange { .. } => ExprError::ScalarDependsOnX(name.clone()),
                other => other,
            })?;
            if node.uses_space() {
                return Err(ExprError::ScalarDependsOnX(name.clone()));
            }
            parsed.push(node);
        }
        // topological check
        let n = names.len();
        let mut state = vec![0u8; n];
        fn deps(node: &Node, out: &mut Vec<usize>) {
            match node {
                Node::Scalar(i) => out.push(*i),
                Node::Neg(a) => deps(a, out),
                Node::Add(a, b) | Node::Sub(a, b) | Node::Mul(a, b) | Node::Div(a, b) | Node::Pow(a, b) => {
                    deps(a, out);
                    deps(b, out);
                }
                Node::Call(_, args) => args.iter().for_each(|a| deps(a, out)),
                _ => {}
            }
        }
        fn visit(i: usize, nodes: &[Node], state: &mut [u8], order: &mut Vec<usize>, names: &[String]) -> Result<(), ExprError> {
            match state[i] {
                2 => return Ok(()),
                1 => return Err(ExprError::CyclicScalar(names[i].clone())),
                _ => {}
            }
            state[i] = 1;
            let mut d = Vec::new();
            deps(&nodes[i], &mut d);
            for j in d {
                visit(j, nodes, state, order, names)?;
            }
            state[i] = 2;
            order.push(i);
            Ok(())
        }
        let mut order = Vec::new();
        for i in 0..n {
            visit(i, &parsed, &mut state, &mut order, &names)?;
        }
        let mut time_dependent = vec![false; n];
        for &i in &order {
            time_dependent[i] = parsed[i].uses_time(&time_dependent);
        }
        Ok(ScalarTable {
            names,
            nodes: parsed,
            time_dependent,
        })
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    fn values(&self, t: f64) -> Vec<f64> {
        let n = self.names.len();
        let mut vals = vec![f64::NAN; n];
        let mut done = vec![false; n];
        fn resolve(i: usize, t: f64, table: &ScalarTable, vals: &mut [f64], done: &mut [bool]) {
            if done[i] {
                return;
            }
            let mut d = Vec::new();
            collect(&table.nodes[i], &mut d);
            for j in d {
                resolve(j, t, table, vals, done);
            }
            vals[i] = table.nodes[i].eval(t, &[], vals);
            done[i] = true;
        }
        fn collect(node: &Node, out: &mut Vec<usize>) {
            match node {
                Node::Scalar(i) => out.push(*i),
                Node::Neg(a) => collect(a, out),
                Node::Add(a, b) | Node::Sub(a, b) | Node::Mul(a, b) | Node::Div(a, b) | Node::Pow(a, b) => {
                    collect(a, out);
                    collect(b, out);
                }
                Node::Call(_, args) => args.iter().for_each(|a| collect(a, out)),
                _ => {}
            }
        }
        for i in 0..n {
            resolve(i, t, self, &mut vals, &mut done);
        }
        vals
    }
}

/// A compiled scalar expression in `(t, x)`.
#[derive(Clone)]
pub struct Expr {
    src: String,
    node: Arc<Node>,
    scalars: Arc<ScalarTable>,
    dim: usize,
}

impl fmt::Debug for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Expr({:?})", self.src)
    }
}

impl Expr {
    pub fn parse(src: &str, dim: usize) -> Result<Self, ExprError> {
        Self::parse_with(src, dim, Arc::new(ScalarTable::default()))
    }

    pub fn parse_with(src: &str, dim: usize, scalars: Arc<ScalarTable>) -> Result<Self, ExprError> {
        let node = parse_node(src, dim, scalars.names())?;
        Ok(Expr {
            src: src.to_string(),
            node: Arc::new(node),
            scalars,
            dim,
        })
    }

    pub fn source(&self) -> &str {
        &self.src
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn eval(&self, t: f64, x: &[f64]) -> f64 {
        if self.scalars.names.is_empty() {
            self.node.eval(t, x, &[])
        } else {
            let vals = self.scalars.values(t);
            self.node.eval(t, x, &vals)
        }
    }

    pub fn depends_on_time(&self) -> bool {
        self.node.uses_time(&self.scalars.time_dependent)
    }

    pub fn depends_on_space(&self) -> bool {
        self.node.uses_space()
    }

    pub fn is_zero(&self) -> bool {
        self.node.is_zero()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn arithmetic_and_precedence() {
        let e = Expr::parse("1 + 2*3^2 - 4/2", 1).unwrap();
        assert_eq!(e.eval(0.0, &[0.0]), 1.0 + 18.0 - 2.0);
        let e = Expr::parse("-2^2", 1).unwrap();
        assert_eq!(e.eval(0.0, &[0.0]), -4.0);
        let e = Expr::parse("2^3^2", 1).unwrap();
        assert_eq!(e.eval(0.0, &[0.0]), 512.0);
    }

    #[test]
    fn coordinates_and_functions() {
        let e = Expr::parse("x1*exp(-x2) + r2 + max(t, 1)", 2).unwrap();
        let v = e.eval(0.5, &[2.0, 0.0]);
        assert!((v - (2.0 + 4.0 + 1.0)).abs() < 1e-15);
        assert!(e.depends_on_time());
        assert!(e.depends_on_space());
        let e = Expr::parse("tanh(x)", 1).unwrap();
        assert!((e.eval(0.0, &[0.3]) - 0.3f64.tanh()).abs() < 1e-15);
        assert!(!e.depends_on_time());
    }

    #[test]
    fn bump_is_compactly_supported() {
        let e = Expr::parse("bump((x - 2)/0.5)", 1).unwrap();
        assert_eq!(e.eval(0.0, &[1.5]), 0.0);
        assert_eq!(e.eval(0.0, &[2.6]), 0.0);
        assert!((e.eval(0.0, &[2.0]) - (-1.0f64).exp()).abs() < 1e-15);
        assert!(e.eval(0.0, &[2.49]) > 0.0);
    }

    #[test]
    fn scientific_literals() {
        let e = Expr::parse("1.5e-3 * 2E2", 1).unwrap();
        assert!((e.eval(0.0, &[0.0]) - 0.3).abs() < 1e-15);
    }

    #[test]
    fn errors_are_reported() {
        assert!(matches!(Expr::parse("x3", 2), Err(ExprError::CoordinateOutOfRange { .. })));
        assert!(matches!(Expr::parse("foo(1)", 1), Err(ExprError::UnknownFunction(_))));
        assert!(matches!(Expr::parse("y", 1), Err(ExprError::UnknownIdent(_))));
        assert!(matches!(Expr::parse("1 +", 1), Err(ExprError::UnexpectedEnd(_))));
        assert!(matches!(Expr::parse("max(1)", 1), Err(ExprError::Arity { .. })));
        assert!(matches!(Expr::parse("x", 2), Err(ExprError::UnknownIdent(_))));
        assert!(Expr::parse("1 $ 2", 1).is_err());
    }

    #[test]
    fn scalars_are_time_dependent() {
        let mut defs = BTreeMap::new();
        defs.insert("a".to_string(), "1 + 0.5*sin(t)".to_string());
        defs.insert("b".to_string(), "2*a".to_string());
        let table = Arc::new(ScalarTable::new(&defs).unwrap());
        let e = Expr::parse_with("-b*x", 1, table).unwrap();
        assert!(e.depends_on_time());
        let t = 0.7;
        assert!((e.eval(t, &[2.0]) + 2.0 * (1.0 + 0.5 * t.sin()) * 2.0).abs() < 1e-14);
    }

    #[test]
    fn scalar_cycles_and_space_rejected() {
        let mut defs = BTreeMap::new();
        defs.insert("a".to_string(), "b".to_string());
        defs.insert("b".to_string(), "a".to_string());
        assert!(matches!(ScalarTable::new(&defs), Err(ExprError::CyclicScalar(_))));
        let mut defs = BTreeMap::new();
        defs.insert("a".to_string(), "x1".to_string());
        assert!(matches!(ScalarTable::new(&defs), Err(ExprError::ScalarDependsOnX(_))));
    }
}
