//! Scalar field expressions over the chart coordinates `x1..xp, y1..yq`.
//!
//! Grammar (whitespace-insensitive):
//!
//! ```text
//! sum     := product (('+' | '-') product)*
//! product := unary (('*' | '/') unary)*
//! unary   := '-' unary | power
//! power   := atom ('^' '-'? integer)*
//! atom    := number | variable | func '(' sum ')' | '(' sum ')'
//! ```

use std::fmt;

use crate::error::{Error, Result};
use crate::taylor::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Func {
    Sin,
    Cos,
    Exp,
}

impl Func {
    fn name(self) -> &'static str {
        match self {
            Func::Sin => "sin",
            Func::Cos => "cos",
            Func::Exp => "exp",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Node {
    Num(f64),
    /// Global coordinate index: `x` variables first, then `y`.
    Var(usize),
    Neg(Box<Node>),
    Bin(BinOp, Box<Node>, Box<Node>),
    Pow(Box<Node>, i32),
    Call(Func, Box<Node>),
}

impl Node {
    fn eval<S: Scalar>(&self, pt: &[S]) -> Result<S> {
        Ok(match self {
            Node::Num(v) => S::from_f64(*v),
            Node::Var(i) => pt[*i].clone(),
            Node::Neg(a) => -a.eval(pt)?,
            Node::Bin(op, a, b) => {
                let (a, b) = (a.eval(pt)?, b.eval(pt)?);
                match op {
                    BinOp::Add => a + b,
                    BinOp::Sub => a - b,
                    BinOp::Mul => a * b,
                    BinOp::Div => {
                        if b.standard() == 0.0 {
                            return Err(Error::DivisionByZero);
                        }
                        a / b
                    }
                }
            }
            Node::Pow(a, e) => {
                let a = a.eval(pt)?;
                if *e < 0 && a.standard() == 0.0 {
                    return Err(Error::DivisionByZero);
                }
                a.powi(*e)
            }
            Node::Call(f, a) => {
                let a = a.eval(pt)?;
                match f {
                    Func::Sin => a.sin(),
                    Func::Cos => a.cos(),
                    Func::Exp => a.exp(),
                }
            }
        })
    }

    fn map_vars(&self, f: &impl Fn(usize) -> Node) -> Node {
        match self {
            Node::Num(v) => Node::Num(*v),
            Node::Var(i) => f(*i),
            Node::Neg(a) => Node::Neg(Box::new(a.map_vars(f))),
            Node::Bin(op, a, b) => Node::Bin(*op, Box::new(a.map_vars(f)), Box::new(b.map_vars(f))),
            Node::Pow(a, e) => Node::Pow(Box::new(a.map_vars(f)), *e),
            Node::Call(g, a) => Node::Call(*g, Box::new(a.map_vars(f))),
        }
    }

    fn uses_var(&self, pred: &impl Fn(usize) -> bool) -> bool {
        match self {
            Node::Num(_) => false,
            Node::Var(i) => pred(*i),
            Node::Neg(a) | Node::Pow(a, _) | Node::Call(_, a) => a.uses_var(pred),
            Node::Bin(_, a, b) => a.uses_var(pred) || b.uses_var(pred),
        }
    }

    fn is_zero(&self) -> bool {
        matches!(self, Node::Num(v) if *v == 0.0)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScalarFieldExpr {
    root: Node,
    p: usize,
    q: usize,
}

impl ScalarFieldExpr {
    pub fn parse(text: &str, p: usize, q: usize) -> Result<Self> {
        let mut parser = Parser {
            src: text.as_bytes(),
            pos: 0,
            p,
            q,
        };
        let root = parser.sum()?;
        parser.skip_ws();
        if parser.pos != parser.src.len() {
            return Err(Error::Syntax {
                offset: parser.pos,
                message: "unexpected trailing input".into(),
            });
        }
        Ok(ScalarFieldExpr { root, p, q })
    }

    pub fn constant(v: f64, p: usize, q: usize) -> Self {
        ScalarFieldExpr {
            root: Node::Num(v),
            p,
            q,
        }
    }

    pub fn var(index: usize, p: usize, q: usize) -> Self {
        assert!(index < p + q);
        ScalarFieldExpr {
            root: Node::Var(index),
            p,
            q,
        }
    }

    pub fn from_node(root: Node, p: usize, q: usize) -> Self {
        ScalarFieldExpr { root, p, q }
    }

    pub fn node(&self) -> &Node {
        &self.root
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.p, self.q)
    }

    pub fn is_zero(&self) -> bool {
        self.root.is_zero()
    }

    pub fn evaluate<S: Scalar>(&self, point: &[S]) -> Result<S> {
        if point.len() != self.p + self.q {
            return Err(Error::PointDimension {
                expected: self.p + self.q,
                found: point.len(),
            });
        }
        self.root.eval(point)
    }

    /// True when some tangential variable occurs syntactically.
    pub fn mentions_x(&self) -> bool {
        let p = self.p;
        self.root.uses_var(&|i| i < p)
    }

    /// Replaces every variable by an expression in a new coordinate system.
    pub fn substitute(&self, vars: &[ScalarFieldExpr]) -> Result<ScalarFieldExpr> {
        if vars.len() != self.p + self.q {
            return Err(Error::PointDimension {
                expected: self.p + self.q,
                found: vars.len(),
            });
        }
        let (p, q) = vars.first().map(|v| (v.p, v.q)).unwrap_or((0, 0));
        Ok(ScalarFieldExpr {
            root: self.root.map_vars(&|i| vars[i].root.clone()),
            p,
            q,
        })
    }

    fn combine(op: BinOp, a: &Self, b: &Self) -> Self {
        ScalarFieldExpr {
            root: Node::Bin(op, Box::new(a.root.clone()), Box::new(b.root.clone())),
            p: a.p,
            q: a.q,
        }
    }

    pub fn plus(&self, other: &Self) -> Self {
        if other.is_zero() {
            return self.clone();
        }
        if self.is_zero() {
            return other.clone();
        }
        Self::combine(BinOp::Add, self, other)
    }

    pub fn minus(&self, other: &Self) -> Self {
        Self::combine(BinOp::Sub, self, other)
    }

    pub fn times(&self, other: &Self) -> Self {
        Self::combine(BinOp::Mul, self, other)
    }

    pub fn negated(&self) -> Self {
        ScalarFieldExpr {
            root: Node::Neg(Box::new(self.root.clone())),
            p: self.p,
            q: self.q,
        }
    }

    pub fn scaled(&self, c: f64) -> Self {
        Self::combine(BinOp::Mul, &ScalarFieldExpr::constant(c, self.p, self.q), self)
    }

    fn var_name(&self, i: usize) -> String {
        if i < self.p {
            format!("x{}", i + 1)
        } else {
            format!("y{}", i - self.p + 1)
        }
    }

    fn write_node(&self, node: &Node, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match node {
            Node::Num(v) => write!(f, "{v:?}"),
            Node::Var(i) => write!(f, "{}", self.var_name(*i)),
            Node::Neg(a) => {
                write!(f, "(-")?;
                self.write_node(a, f)?;
                write!(f, ")")
            }
            Node::Bin(op, a, b) => {
                let sym = match op {
                    BinOp::Add => "+",
                    BinOp::Sub => "-",
                    BinOp::Mul => "*",
                    BinOp::Div => "/",
                };
                write!(f, "(")?;
                self.write_node(a, f)?;
                write!(f, " {sym} ")?;
                self.write_node(b, f)?;
                write!(f, ")")
            }
            Node::Pow(a, e) => {
                write!(f, "(")?;
                self.write_node(a, f)?;
                write!(f, ")^{e}")
            }
            Node::Call(g, a) => {
                write!(f, "{}(", g.name())?;
                self.write_node(a, f)?;
                write!(f, ")")
            }
        }
    }
}

impl fmt::Display for ScalarFieldExpr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.write_node(&self.root, f)
    }
}

struct Parser<'a> {
    src: &'a [u8],
    pos: usize,
    p: usize,
    q: usize,
}

impl Parser<'_> {
    fn skip_ws(&mut self) {
        while self.pos < self.src.len() && self.src[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
    }

    fn peek(&mut self) -> Option<u8> {
        self.skip_ws();
        self.src.get(self.pos).copied()
    }

    fn err(&self, message: impl Into<String>) -> Error {
        Error::Syntax {
            offset: self.pos,
            message: message.into(),
        }
    }

    fn expect(&mut self, c: u8) -> Result<()> {
        if self.peek() == Some(c) {
            self.pos += 1;
            Ok(())
        } else {
            Err(self.err(format!("expected `{}`", c as char)))
        }
    }

    fn sum(&mut self) -> Result<Node> {
        let mut lhs = self.product()?;
        loop {
            let op = match self.peek() {
                Some(b'+') => BinOp::Add,
                Some(b'-') => BinOp::Sub,
                _ => return Ok(lhs),
            };
            self.pos += 1;
            let rhs = self.product()?;
            lhs = Node::Bin(op, Box::new(lhs), Box::new(rhs));
        }
    }

    fn product(&mut self) -> Result<Node> {
        let mut lhs = self.unary()?;
        loop {
            let op = match self.peek() {
                Some(b'*') => BinOp::Mul,
                Some(b'/') => BinOp::Div,
                _ => return Ok(lhs),
            };
            self.pos += 1;
            let rhs = self.unary()?;
            lhs = Node::Bin(op, Box::new(lhs), Box::new(rhs));
        }
    }

    fn unary(&mut self) -> Result<Node> {
        if self.peek() == Some(b'-') {
            self.pos += 1;
            return Ok(Node::Neg(Box::new(self.unary()?)));
        }
        self.power()
    }

    fn power(&mut self) -> Result<Node> {
        let mut base = self.atom()?;
        while self.peek() == Some(b'^') {
            self.pos += 1;
            let neg = if self.peek() == Some(b'-') {
                self.pos += 1;
                true
            } else {
                false
            };
            self.skip_ws();
            let start = self.pos;
            while self.pos < self.src.len() && self.src[self.pos].is_ascii_digit() {
                self.pos += 1;
            }
            if start == self.pos {
                return Err(self.err("expected an integer exponent"));
            }
            let text = std::str::from_utf8(&self.src[start..self.pos]).expect("ascii digits");
            let e: i32 = text.parse().map_err(|_| Error::Syntax {
                offset: start,
                message: "exponent out of range".into(),
            })?;
            base = Node::Pow(Box::new(base), if neg { -e } else { e });
        }
        Ok(base)
    }

    fn atom(&mut self) -> Result<Node> {
        match self.peek() {
            Some(b'(') => {
                self.pos += 1;
                let inner = self.sum()?;
                self.expect(b')')?;
                Ok(inner)
            }
            Some(c) if c.is_ascii_digit() || c == b'.' => self.number(),
            Some(c) if c.is_ascii_alphabetic() => self.ident(),
            Some(_) => Err(self.err("unexpected character")),
            None => Err(self.err("unexpected end of input")),
        }
    }

    fn number(&mut self) -> Result<Node> {
        let start = self.pos;
        let s = self.src;
        while self.pos < s.len() && (s[self.pos].is_ascii_digit() || s[self.pos] == b'.') {
            self.pos += 1;
        }
        if self.pos < s.len() && (s[self.pos] == b'e' || s[self.pos] == b'E') {
            let mut look = self.pos + 1;
            if look < s.len() && (s[look] == b'+' || s[look] == b'-') {
                look += 1;
            }
            if look < s.len() && s[look].is_ascii_digit() {
                self.pos = look;
                while self.pos < s.len() && s[self.pos].is_ascii_digit() {
                    self.pos += 1;
                }
            }
        }
        let text = std::str::from_utf8(&s[start..self.pos]).expect("ascii");
        text.parse::<f64>().map(Node::Num).map_err(|_| Error::Syntax {
            offset: start,
            message: format!("malformed number `{text}`"),
        })
    }

    fn ident(&mut self) -> Result<Node> {
        let start = self.pos;
        while self.pos < self.src.len() && self.src[self.pos].is_ascii_alphanumeric() {
            self.pos += 1;
        }
        let name = std::str::from_utf8(&self.src[start..self.pos]).expect("ascii");
        let func = match name {
            "sin" => Some(Func::Sin),
            "cos" => Some(Func::Cos),
            "exp" => Some(Func::Exp),
            _ => None,
        };
        if let Some(func) = func {
            self.expect(b'(')?;
            let mut args = Vec::new();
            if self.peek() != Some(b')') {
                args.push(self.sum()?);
                while self.peek() == Some(b',') {
                    self.pos += 1;
                    args.push(self.sum()?);
                }
            }
            self.expect(b')')?;
            if args.len() != 1 {
                return Err(Error::Arity {
                    name: name.into(),
                    expected: 1,
                    found: args.len(),
                });
            }
            return Ok(Node::Call(func, Box::new(args.pop().expect("one arg"))));
        }
        if self.peek() == Some(b'(') {
            return Err(Error::UnknownFunction {
                name: name.into(),
                offset: start,
            });
        }
        let unknown = || Error::UnknownVariable {
            name: name.into(),
            offset: start,
        };
        let (kind, digits) = name.split_at(1);
        let idx: usize = digits.parse().map_err(|_| unknown())?;
        if idx == 0 || digits.starts_with('0') {
            return Err(unknown());
        }
        match kind {
            "x" if idx <= self.p => Ok(Node::Var(idx - 1)),
            "y" if idx <= self.q => Ok(Node::Var(self.p + idx - 1)),
            _ => Err(unknown()),
        }
    }
}
