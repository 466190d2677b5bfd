//! Expression DSL for user-defined 1D scalar functions.
//!
//! Small arithmetic language over a single variable `x` with named parameter
//! bindings, exact symbolic differentiation, and compilation to a flat
//! postfix program for tight inner loops. The node set is fixed to
//! `{constant, x, +, -, *, /, integer powers, exp, cos, sin, tanh}`; keeping
//! exponents to integer literals keeps differentiation closed over the
//! node set.

use std::collections::BTreeMap;
use std::fmt;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ExprError {
    #[error("parse error at offset {pos}: {msg}")]
    Parse { pos: usize, msg: String },
    #[error("unknown identifier `{name}` at offset {pos}")]
    UnknownIdent { name: String, pos: usize },
    #[error("unbound parameter `{0}`")]
    UnboundParam(String),
    #[error("division by zero at x = {x}")]
    DivisionByZero { x: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub enum Node {
    Const(f64),
    Var,
    Param(String),
    Add(Box<Node>, Box<Node>),
    Sub(Box<Node>, Box<Node>),
    Mul(Box<Node>, Box<Node>),
    Div(Box<Node>, Box<Node>),
    Pow(Box<Node>, i32),
    Exp(Box<Node>),
    Cos(Box<Node>),
    Sin(Box<Node>),
    Tanh(Box<Node>),
}

/// Parsed expression tree over `x` together with its parameter bindings.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarExpr {
    root: Node,
    params: BTreeMap<String, f64>,
}

impl ScalarExpr {
    /// Parse `source` with the given parameter bindings.
    ///
    /// Identifiers other than `x` and the built-in functions must appear in
    /// `params`, otherwise the parse fails with `UnknownIdent`.
    pub fn parse(source: &str, params: &BTreeMap<String, f64>) -> Result<Self, ExprError> {
        let mut p = Parser::new(source, params);
        let root = p.parse_expr()?;
        p.skip_ws();
        if p.pos < p.bytes.len() {
            return Err(ExprError::Parse {
                pos: p.pos,
                msg: format!("unexpected trailing input `{}`", &source[p.pos..]),
            });
        }
        Ok(ScalarExpr {
            root,
            params: params.clone(),
        })
    }

    pub fn from_node(root: Node, params: BTreeMap<String, f64>) -> Self {
        ScalarExpr { root, params }
    }

    pub fn root(&self) -> &Node {
        &self.root
    }

    pub fn params(&self) -> &BTreeMap<String, f64> {
        &self.params
    }

    /// Evaluate at `x`, reporting division by zero instead of crashing.
    pub fn eval(&self, x: f64) -> Result<f64, ExprError> {
        eval_node(&self.root, x, &self.params)
    }

    /// Exact symbolic derivative; apply twice for the second derivative.
    pub fn differentiate(&self) -> ScalarExpr {
        ScalarExpr {
            root: simplify(diff_node(&self.root)),
            params: self.params.clone(),
        }
    }

    /// Flatten to a postfix program with parameters resolved to constants.
    pub fn compile(&self) -> Result<CompiledExpr, ExprError> {
        let mut ops = Vec::new();
        flatten(&self.root, &self.params, &mut ops)?;
        let mut depth = 0usize;
        let mut max_depth = 0usize;
        for op in &ops {
            match op {
                Op::Const(_) | Op::X => depth += 1,
                Op::Add | Op::Sub | Op::Mul | Op::Div => depth -= 1,
                _ => {}
            }
            max_depth = max_depth.max(depth);
        }
        Ok(CompiledExpr { ops, max_depth })
    }

    /// Deterministic fully parenthesized source form; `parse` of the output
    /// with the same bindings is evaluation-equivalent to `self`.
    pub fn to_source(&self) -> String {
        let mut s = String::new();
        print_node(&self.root, &mut s);
        s
    }
}

impl fmt::Display for ScalarExpr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_source())
    }
}

fn eval_node(n: &Node, x: f64, params: &BTreeMap<String, f64>) -> Result<f64, ExprError> {
    Ok(match n {
        Node::Const(c) => *c,
        Node::Var => x,
        Node::Param(name) => *params
            .get(name)
            .ok_or_else(|| ExprError::UnboundParam(name.clone()))?,
        Node::Add(a, b) => eval_node(a, x, params)? + eval_node(b, x, params)?,
        Node::Sub(a, b) => eval_node(a, x, params)? - eval_node(b, x, params)?,
        Node::Mul(a, b) => eval_node(a, x, params)? * eval_node(b, x, params)?,
        Node::Div(a, b) => {
            let den = eval_node(b, x, params)?;
            if den == 0.0 {
                return Err(ExprError::DivisionByZero { x });
            }
            eval_node(a, x, params)? / den
        }
        Node::Pow(a, k) => {
            let base = eval_node(a, x, params)?;
            if base == 0.0 && *k < 0 {
                return Err(ExprError::DivisionByZero { x });
            }
            base.powi(*k)
        }
        Node::Exp(a) => eval_node(a, x, params)?.exp(),
        Node::Cos(a) => eval_node(a, x, params)?.cos(),
        Node::Sin(a) => eval_node(a, x, params)?.sin(),
        Node::Tanh(a) => eval_node(a, x, params)?.tanh(),
    })
}

fn diff_node(n: &Node) -> Node {
    use Node::*;
    match n {
        Const(_) | Param(_) => Const(0.0),
        Var => Const(1.0),
        Add(a, b) => Add(Box::new(diff_node(a)), Box::new(diff_node(b))),
        Sub(a, b) => Sub(Box::new(diff_node(a)), Box::new(diff_node(b))),
        Mul(a, b) => Add(
            Box::new(Mul(Box::new(diff_node(a)), b.clone())),
            Box::new(Mul(a.clone(), Box::new(diff_node(b)))),
        ),
        Div(a, b) => Div(
            Box::new(Sub(
                Box::new(Mul(Box::new(diff_node(a)), b.clone())),
                Box::new(Mul(a.clone(), Box::new(diff_node(b)))),
            )),
            Box::new(Pow(b.clone(), 2)),
        ),
        Pow(a, k) => match *k {
            0 => Const(0.0),
            1 => diff_node(a),
            k => Mul(
                Box::new(Mul(
                    Box::new(Const(f64::from(k))),
                    Box::new(Pow(a.clone(), k - 1)),
                )),
                Box::new(diff_node(a)),
            ),
        },
        Exp(a) => Mul(Box::new(Exp(a.clone())), Box::new(diff_node(a))),
        Cos(a) => Mul(
            Box::new(Sub(Box::new(Const(0.0)), Box::new(Sin(a.clone())))),
            Box::new(diff_node(a)),
        ),
        Sin(a) => Mul(Box::new(Cos(a.clone())), Box::new(diff_node(a))),
        Tanh(a) => Mul(
            Box::new(Sub(
                Box::new(Const(1.0)),
                Box::new(Pow(Box::new(Tanh(a.clone())), 2)),
            )),
            Box::new(diff_node(a)),
        ),
    }
}

/// Neutral-element cleanup only; rewrites that could change evaluation on
/// non-finite intermediates are avoided.
fn simplify(n: Node) -> Node {
    use Node::*;
    match n {
        Add(a, b) => {
            let (a, b) = (simplify(*a), simplify(*b));
            match (&a, &b) {
                (Const(z), _) if *z == 0.0 => b,
                (_, Const(z)) if *z == 0.0 => a,
                _ => Add(Box::new(a), Box::new(b)),
            }
        }
        Sub(a, b) => {
            let (a, b) = (simplify(*a), simplify(*b));
            match (&a, &b) {
                (_, Const(z)) if *z == 0.0 => a,
                _ => Sub(Box::new(a), Box::new(b)),
            }
        }
        Mul(a, b) => {
            let (a, b) = (simplify(*a), simplify(*b));
            match (&a, &b) {
                (Const(o), _) if *o == 1.0 => b,
                (_, Const(o)) if *o == 1.0 => a,
                (Const(c), Const(d)) => Const(c * d),
                _ => Mul(Box::new(a), Box::new(b)),
            }
        }
        Div(a, b) => {
            let (a, b) = (simplify(*a), simplify(*b));
            match &b {
                Const(o) if *o == 1.0 => a,
                _ => Div(Box::new(a), Box::new(b)),
            }
        }
        Pow(a, k) => {
            let a = simplify(*a);
            match k {
                0 => Const(1.0),
                1 => a,
                _ => Pow(Box::new(a), k),
            }
        }
        Exp(a) => Exp(Box::new(simplify(*a))),
        Cos(a) => Cos(Box::new(simplify(*a))),
        Sin(a) => Sin(Box::new(simplify(*a))),
        Tanh(a) => Tanh(Box::new(simplify(*a))),
        other => other,
    }
}

fn print_node(n: &Node, out: &mut String) {
    use std::fmt::Write;
    match n {
        Node::Const(c) => {
            let _ = write!(out, "{c:?}");
        }
        Node::Var => out.push('x'),
        Node::Param(name) => out.push_str(name),
        Node::Add(a, b) => binary(out, a, " + ", b),
        Node::Sub(a, b) => binary(out, a, " - ", b),
        Node::Mul(a, b) => binary(out, a, " * ", b),
        Node::Div(a, b) => binary(out, a, " / ", b),
        Node::Pow(a, k) => {
            out.push('(');
            print_node(a, out);
            let _ = write!(out, "^{k}");
            out.push(')');
        }
        Node::Exp(a) => func(out, "exp", a),
        Node::Cos(a) => func(out, "cos", a),
        Node::Sin(a) => func(out, "sin", a),
        Node::Tanh(a) => func(out, "tanh", a),
    }
}

fn binary(out: &mut String, a: &Node, op: &str, b: &Node) {
    out.push('(');
    print_node(a, out);
    out.push_str(op);
    print_node(b, out);
    out.push(')');
}

fn func(out: &mut String, name: &str, a: &Node) {
    out.push_str(name);
    out.push('(');
    print_node(a, out);
    out.push(')');
}

// ------------------------------------------------------------------
// Compiled form
// ------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Op {
    Const(f64),
    X,
    Add,
    Sub,
    Mul,
    Div,
    Powi(i32),
    Exp,
    Cos,
    Sin,
    Tanh,
}

/// Postfix program over a value stack. Division by zero and overflow
/// propagate as non-finite values; callers in stochastic loops treat those
/// through the divergence guard, while `eval_checked` reports them.
#[derive(Debug, Clone)]
pub struct CompiledExpr {
    ops: Vec<Op>,
    max_depth: usize,
}

const STACK_CAP: usize = 64;

impl CompiledExpr {
    #[inline]
    pub fn eval(&self, x: f64) -> f64 {
        debug_assert!(self.max_depth <= STACK_CAP);
        let mut stack = [0.0f64; STACK_CAP];
        let mut top = 0usize;
        for op in &self.ops {
            match *op {
                Op::Const(c) => {
                    stack[top] = c;
                    top += 1;
                }
                Op::X => {
                    stack[top] = x;
                    top += 1;
                }
                Op::Add => {
                    top -= 1;
                    stack[top - 1] += stack[top];
                }
                Op::Sub => {
                    top -= 1;
                    stack[top - 1] -= stack[top];
                }
                Op::Mul => {
                    top -= 1;
                    stack[top - 1] *= stack[top];
                }
                Op::Div => {
                    top -= 1;
                    stack[top - 1] /= stack[top];
                }
                Op::Powi(k) => stack[top - 1] = stack[top - 1].powi(k),
                Op::Exp => stack[top - 1] = stack[top - 1].exp(),
                Op::Cos => stack[top - 1] = stack[top - 1].cos(),
                Op::Sin => stack[top - 1] = stack[top - 1].sin(),
                Op::Tanh => stack[top - 1] = stack[top - 1].tanh(),
            }
        }
        stack[0]
    }

    pub fn eval_checked(&self, x: f64) -> Result<f64, ExprError> {
        let v = self.eval(x);
        if v.is_nan() || v.is_infinite() {
            // Re-run through the checked tree path would need the tree; the
            // only in-grammar source of NaN/inf at finite x is division by
            // zero or powi of zero with negative exponent.
            return Err(ExprError::DivisionByZero { x });
        }
        Ok(v)
    }

    pub fn ops(&self) -> &[Op] {
        &self.ops
    }
}

fn flatten(n: &Node, params: &BTreeMap<String, f64>, out: &mut Vec<Op>) -> Result<(), ExprError> {
    match n {
        Node::Const(c) => out.push(Op::Const(*c)),
        Node::Var => out.push(Op::X),
        Node::Param(name) => {
            let v = params
                .get(name)
                .ok_or_else(|| ExprError::UnboundParam(name.clone()))?;
            out.push(Op::Const(*v));
        }
        Node::Add(a, b) => {
            flatten(a, params, out)?;
            flatten(b, params, out)?;
            out.push(Op::Add);
        }
        Node::Sub(a, b) => {
            flatten(a, params, out)?;
            flatten(b, params, out)?;
            out.push(Op::Sub);
        }
        Node::Mul(a, b) => {
            flatten(a, params, out)?;
            flatten(b, params, out)?;
            out.push(Op::Mul);
        }
        Node::Div(a, b) => {
            flatten(a, params, out)?;
            flatten(b, params, out)?;
            out.push(Op::Div);
        }
        Node::Pow(a, k) => {
            flatten(a, params, out)?;
            out.push(Op::Powi(*k));
        }
        Node::Exp(a) => {
            flatten(a, params, out)?;
            out.push(Op::Exp);
        }
        Node::Cos(a) => {
            flatten(a, params, out)?;
            out.push(Op::Cos);
        }
        Node::Sin(a) => {
            flatten(a, params, out)?;
            out.push(Op::Sin);
        }
        Node::Tanh(a) => {
            flatten(a, params, out)?;
            out.push(Op::Tanh);
        }
    }
    Ok(())
}

// ------------------------------------------------------------------
// Parser
// ------------------------------------------------------------------

struct Parser<'a> {
    src: &'a str,
    bytes: &'a [u8],
    pos: usize,
    params: &'a BTreeMap<String, f64>,
}

impl<'a> Parser<'a> {
    fn new(src: &'a str, params: &'a BTreeMap<String, f64>) -> Self {
        Parser {
            src,
            bytes: src.as_bytes(),
            pos: 0,
            params,
        }
    }

    fn skip_ws(&mut self) {
        while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
    }

    fn peek(&mut self) -> Option<u8> {
        self.skip_ws();
        self.bytes.get(self.pos).copied()
    }

    fn parse_expr(&mut self) -> Result<Node, ExprError> {
        let mut lhs = self.parse_term()?;
        loop {
            match self.peek() {
                Some(b'+') => {
                    self.pos += 1;
                    let rhs = self.parse_term()?;
                    lhs = Node::Add(Box::new(lhs), Box::new(rhs));
                }
                Some(b'-') => {
                    self.pos += 1;
                    let rhs = self.parse_term()?;
                    lhs = Node::Sub(Box::new(lhs), Box::new(rhs));
                }
                _ => return Ok(lhs),
            }
        }
    }

    fn parse_term(&mut self) -> Result<Node, ExprError> {
        let mut lhs = self.parse_factor()?;
        loop {
            match self.peek() {
                Some(b'*') => {
                    self.pos += 1;
                    let rhs = self.parse_factor()?;
                    lhs = Node::Mul(Box::new(lhs), Box::new(rhs));
                }
                Some(b'/') => {
                    self.pos += 1;
                    let rhs = self.parse_factor()?;
                    lhs = Node::Div(Box::new(lhs), Box::new(rhs));
                }
                _ => return Ok(lhs),
            }
        }
    }

    fn parse_factor(&mut self) -> Result<Node, ExprError> {
        if self.peek() == Some(b'-') {
            self.pos += 1;
            let inner = self.parse_factor()?;
            return Ok(Node::Sub(Box::new(Node::Const(0.0)), Box::new(inner)));
        }
        self.parse_power()
    }

    fn parse_power(&mut self) -> Result<Node, ExprError> {
        let base = self.parse_atom()?;
        if self.peek() == Some(b'^') {
            self.pos += 1;
            let k = self.parse_int_literal()?;
            return Ok(Node::Pow(Box::new(base), k));
        }
        Ok(base)
    }

    fn parse_int_literal(&mut self) -> Result<i32, ExprError> {
        self.skip_ws();
        let start = self.pos;
        if self.bytes.get(self.pos) == Some(&b'-') {
            self.pos += 1;
        }
        let digits_start = self.pos;
        while self
            .bytes
            .get(self.pos)
            .is_some_and(|b| b.is_ascii_digit())
        {
            self.pos += 1;
        }
        if self.pos == digits_start {
            return Err(ExprError::Parse {
                pos: start,
                msg: "exponent must be an integer literal".into(),
            });
        }
        self.src[start..self.pos]
            .parse::<i32>()
            .map_err(|_| ExprError::Parse {
                pos: start,
                msg: "integer exponent out of range".into(),
            })
    }

    fn parse_atom(&mut self) -> Result<Node, ExprError> {
        match self.peek() {
            Some(b'(') => {
                self.pos += 1;
                let inner = self.parse_expr()?;
                if self.peek() != Some(b')') {
                    return Err(ExprError::Parse {
                        pos: self.pos,
                        msg: "expected `)`".into(),
                    });
                }
                self.pos += 1;
                Ok(inner)
            }
            Some(b) if b.is_ascii_digit() || b == b'.' => self.parse_number(),
            Some(b) if b.is_ascii_alphabetic() || b == b'_' => self.parse_ident(),
            Some(b) => Err(ExprError::Parse {
                pos: self.pos,
                msg: format!("unexpected character `{}`", b as char),
            }),
            None => Err(ExprError::Parse {
                pos: self.pos,
                msg: "unexpected end of input".into(),
            }),
        }
    }

    fn parse_number(&mut self) -> Result<Node, ExprError> {
        self.skip_ws();
        let start = self.pos;
        while self
            .bytes
            .get(self.pos)
            .is_some_and(|b| b.is_ascii_digit() || *b == b'.')
        {
            self.pos += 1;
        }
        // scientific suffix
        if self.bytes.get(self.pos).is_some_and(|b| *b == b'e' || *b == b'E') {
            let mark = self.pos;
            self.pos += 1;
            if self.bytes.get(self.pos).is_some_and(|b| *b == b'+' || *b == b'-') {
                self.pos += 1;
            }
            if self.bytes.get(self.pos).is_some_and(|b| b.is_ascii_digit()) {
                while self.bytes.get(self.pos).is_some_and(|b| b.is_ascii_digit()) {
                    self.pos += 1;
                }
            } else {
                self.pos = mark; // `e` was an identifier boundary, not an exponent
            }
        }
        self.src[start..self.pos]
            .parse::<f64>()
            .map(Node::Const)
            .map_err(|_| ExprError::Parse {
                pos: start,
                msg: format!("invalid number `{}`", &self.src[start..self.pos]),
            })
    }

    fn parse_ident(&mut self) -> Result<Node, ExprError> {
        self.skip_ws();
        let start = self.pos;
        while self
            .bytes
            .get(self.pos)
            .is_some_and(|b| b.is_ascii_alphanumeric() || *b == b'_')
        {
            self.pos += 1;
        }
        let name = &self.src[start..self.pos];
        match name {
            "x" => Ok(Node::Var),
            "exp" | "cos" | "sin" | "tanh" => {
                if self.peek() != Some(b'(') {
                    return Err(ExprError::Parse {
                        pos: self.pos,
                        msg: format!("expected `(` after `{name}`"),
                    });
                }
                self.pos += 1;
                let inner = self.parse_expr()?;
                if self.peek() != Some(b')') {
                    return Err(ExprError::Parse {
                        pos: self.pos,
                        msg: "expected `)`".into(),
                    });
                }
                self.pos += 1;
                Ok(match name {
                    "exp" => Node::Exp(Box::new(inner)),
                    "cos" => Node::Cos(Box::new(inner)),
                    "sin" => Node::Sin(Box::new(inner)),
                    _ => Node::Tanh(Box::new(inner)),
                })
            }
            _ => {
                if self.params.contains_key(name) {
                    Ok(Node::Param(name.to_string()))
                } else {
                    Err(ExprError::UnknownIdent {
                        name: name.to_string(),
                        pos: start,
                    })
                }
            }
        }
    }
}

/// Random well-formed expression drawn from the grammar; used by the
/// round-trip and derivative property tests.
pub fn random_expr(rng: &mut impl rand::Rng, depth: usize) -> Node {
    if depth == 0 {
        return match rng.gen_range(0..3) {
            0 => Node::Var,
            1 => Node::Const((rng.gen_range(0..400) as f64) / 16.0),
            _ => Node::Var,
        };
    }
    match rng.gen_range(0..9) {
        0 => Node::Add(
            Box::new(random_expr(rng, depth - 1)),
            Box::new(random_expr(rng, depth - 1)),
        ),
        1 => Node::Sub(
            Box::new(random_expr(rng, depth - 1)),
            Box::new(random_expr(rng, depth - 1)),
        ),
        2 => Node::Mul(
            Box::new(random_expr(rng, depth - 1)),
            Box::new(random_expr(rng, depth - 1)),
        ),
        3 => Node::Div(
            Box::new(random_expr(rng, depth - 1)),
            Box::new(random_expr(rng, depth - 1)),
        ),
        4 => Node::Pow(Box::new(random_expr(rng, depth - 1)), rng.gen_range(0..5)),
        5 => Node::Exp(Box::new(random_expr(rng, depth - 1))),
        6 => Node::Cos(Box::new(random_expr(rng, depth - 1))),
        7 => Node::Sin(Box::new(random_expr(rng, depth - 1))),
        _ => Node::Tanh(Box::new(random_expr(rng, depth - 1))),
    }
}
