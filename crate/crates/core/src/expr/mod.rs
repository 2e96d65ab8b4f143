//! Symbolic scalar expressions for model right-hand sides.
//!
//! Trees are built through smart constructors that fold constants and drop
//! additive zeros and multiplicative ones. No further simplification is done:
//! every consumer in this crate compares expressions by value, not by form.

mod compile;
mod parse;

use std::collections::{BTreeSet, HashMap};
use std::fmt;

pub use compile::{CompiledExpr, SlotMap};
pub use parse::{parse_expression, ParseError};

/// Failure while evaluating an expression.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum EvalError {
    #[error("unbound name `{0}`")]
    Unbound(String),
    #[error("division by zero")]
    DivisionByZero,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum UnaryOp {
    Neg,
    Sin,
    Cos,
    Exp,
}

impl UnaryOp {
    fn name(self) -> &'static str {
        match self {
            UnaryOp::Neg => "-",
            UnaryOp::Sin => "sin",
            UnaryOp::Cos => "cos",
            UnaryOp::Exp => "exp",
        }
    }

    fn apply(self, x: f64) -> f64 {
        match self {
            UnaryOp::Neg => -x,
            UnaryOp::Sin => x.sin(),
            UnaryOp::Cos => x.cos(),
            UnaryOp::Exp => x.exp(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BinaryOp {
    Add,
    Sub,
    Mul,
    Div,
}

impl BinaryOp {
    fn symbol(self) -> char {
        match self {
            BinaryOp::Add => '+',
            BinaryOp::Sub => '-',
            BinaryOp::Mul => '*',
            BinaryOp::Div => '/',
        }
    }

    fn precedence(self) -> u8 {
        match self {
            BinaryOp::Add | BinaryOp::Sub => 1,
            BinaryOp::Mul | BinaryOp::Div => 2,
        }
    }
}

/// A leaf that can be bound to a value: a variable, parameter, or the
/// `order`-th time derivative of a variable.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Symbol {
    Name(String),
    Der(String, u32),
}

impl Symbol {
    pub fn name(name: impl Into<String>) -> Self {
        Symbol::Name(name.into())
    }

    pub fn der(name: impl Into<String>, order: u32) -> Self {
        Symbol::Der(name.into(), order)
    }

    /// Key under which this symbol is looked up in [`Bindings`].
    pub fn key(&self) -> String {
        self.to_string()
    }
}

impl fmt::Display for Symbol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Symbol::Name(n) => f.write_str(n),
            Symbol::Der(n, order) => {
                for _ in 0..*order {
                    f.write_str("der(")?;
                }
                f.write_str(n)?;
                for _ in 0..*order {
                    f.write_str(")")?;
                }
                Ok(())
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Const(f64),
    Param(String),
    Var(String),
    /// Time derivative of a variable; order is always >= 1.
    Der(String, u32),
    Unary(UnaryOp, Box<Expr>),
    Binary(BinaryOp, Box<Expr>, Box<Expr>),
    /// Power with a constant exponent.
    Pow(Box<Expr>, f64),
}

pub type Expression = Expr;

impl Expr {
    pub fn constant(c: f64) -> Self {
        Expr::Const(c)
    }

    pub fn var(name: impl Into<String>) -> Self {
        Expr::Var(name.into())
    }

    pub fn param(name: impl Into<String>) -> Self {
        Expr::Param(name.into())
    }

    pub fn der(name: impl Into<String>, order: u32) -> Self {
        assert!(order >= 1, "derivative order must be at least 1");
        Expr::Der(name.into(), order)
    }

    pub fn as_const(&self) -> Option<f64> {
        match self {
            Expr::Const(c) => Some(*c),
            _ => None,
        }
    }

    pub fn is_zero(&self) -> bool {
        self.as_const() == Some(0.0)
    }

    fn is_one(&self) -> bool {
        self.as_const() == Some(1.0)
    }

    pub fn unary(op: UnaryOp, e: Expr) -> Self {
        if let Some(c) = e.as_const().map(|c| op.apply(c)).filter(|c| c.is_finite()) {
            return Expr::Const(c);
        }
        if op == UnaryOp::Neg {
            if let Expr::Unary(UnaryOp::Neg, inner) = e {
                return *inner;
            }
        }
        Expr::Unary(op, Box::new(e))
    }

    pub fn binary(op: BinaryOp, a: Expr, b: Expr) -> Self {
        // Folding never manufactures a non-finite literal.
        let folded = match (op, a.as_const(), b.as_const()) {
            (BinaryOp::Add, Some(x), Some(y)) => Some(x + y),
            (BinaryOp::Sub, Some(x), Some(y)) => Some(x - y),
            (BinaryOp::Mul, Some(x), Some(y)) => Some(x * y),
            (BinaryOp::Div, Some(x), Some(y)) if y != 0.0 => Some(x / y),
            _ => None,
        };
        if let Some(c) = folded.filter(|c| c.is_finite()) {
            return Expr::Const(c);
        }
        match op {
            BinaryOp::Add if a.is_zero() => b,
            BinaryOp::Add | BinaryOp::Sub if b.is_zero() => a,
            BinaryOp::Sub if a.is_zero() => Expr::unary(UnaryOp::Neg, b),
            BinaryOp::Mul if a.is_zero() || b.is_zero() => Expr::Const(0.0),
            BinaryOp::Mul if a.is_one() => b,
            BinaryOp::Mul | BinaryOp::Div if b.is_one() => a,
            BinaryOp::Div if a.is_zero() => Expr::Const(0.0),
            _ => Expr::Binary(op, Box::new(a), Box::new(b)),
        }
    }

    pub fn powf(base: Expr, exponent: f64) -> Self {
        if exponent == 0.0 {
            return Expr::Const(1.0);
        }
        if exponent == 1.0 {
            return base;
        }
        if let Some(c) = base.as_const().map(|c| pow_value(c, exponent)).filter(|c| c.is_finite()) {
            return Expr::Const(c);
        }
        Expr::Pow(Box::new(base), exponent)
    }

    pub fn sin(e: Expr) -> Self {
        Expr::unary(UnaryOp::Sin, e)
    }

    pub fn cos(e: Expr) -> Self {
        Expr::unary(UnaryOp::Cos, e)
    }

    pub fn exp(e: Expr) -> Self {
        Expr::unary(UnaryOp::Exp, e)
    }

    /// Re-tag every variable whose name is in `params` as a parameter.
    pub fn with_parameters<S: AsRef<str>>(self, params: &[S]) -> Expr {
        let is_param = |n: &str| params.iter().any(|p| p.as_ref() == n);
        self.map_leaves(&|leaf| match leaf {
            Expr::Var(n) if is_param(n) => Some(Expr::Param(n.clone())),
            _ => None,
        })
    }

    /// Replace leaves for which `f` returns `Some`, rebuilding through the
    /// smart constructors.
    pub fn map_leaves(&self, f: &dyn Fn(&Expr) -> Option<Expr>) -> Expr {
        match self {
            Expr::Unary(op, e) => Expr::unary(*op, e.map_leaves(f)),
            Expr::Binary(op, a, b) => Expr::binary(*op, a.map_leaves(f), b.map_leaves(f)),
            Expr::Pow(b, p) => Expr::powf(b.map_leaves(f), *p),
            leaf => f(leaf).unwrap_or_else(|| leaf.clone()),
        }
    }

    /// Substitute a symbol with an expression.
    pub fn substitute(&self, sym: &Symbol, with: &Expr) -> Expr {
        self.map_leaves(&|leaf| (leaf.symbol().as_ref() == Some(sym)).then(|| with.clone()))
    }

    /// The bindable symbol of a leaf, if this node is one.
    pub fn symbol(&self) -> Option<Symbol> {
        match self {
            Expr::Var(n) | Expr::Param(n) => Some(Symbol::Name(n.clone())),
            Expr::Der(n, k) => Some(Symbol::Der(n.clone(), *k)),
            _ => None,
        }
    }

    pub fn visit(&self, f: &mut dyn FnMut(&Expr)) {
        f(self);
        match self {
            Expr::Unary(_, e) | Expr::Pow(e, _) => e.visit(f),
            Expr::Binary(_, a, b) => {
                a.visit(f);
                b.visit(f);
            }
            _ => {}
        }
    }

    /// All bindable symbols occurring in the tree.
    pub fn symbols(&self) -> BTreeSet<Symbol> {
        let mut out = BTreeSet::new();
        self.visit(&mut |e| {
            if let Some(s) = e.symbol() {
                out.insert(s);
            }
        });
        out
    }

    /// Variable names (not parameters, not derivatives) occurring in the tree.
    pub fn variables(&self) -> BTreeSet<String> {
        let mut out = BTreeSet::new();
        self.visit(&mut |e| {
            if let Expr::Var(n) = e {
                out.insert(n.clone());
            }
        });
        out
    }

    pub fn contains(&self, sym: &Symbol) -> bool {
        let mut found = false;
        self.visit(&mut |e| found |= e.symbol().as_ref() == Some(sym));
        found
    }

    pub fn node_count(&self) -> usize {
        let mut n = 0;
        self.visit(&mut |_| n += 1);
        n
    }

    /// Exact partial derivative with respect to the variable `v`.
    pub fn differentiate(&self, v: &str) -> Expr {
        self.differentiate_wrt(&Symbol::name(v))
    }

    /// Exact partial derivative with respect to any bindable symbol.
    pub fn differentiate_wrt(&self, sym: &Symbol) -> Expr {
        self.derive(&|leaf| {
            if leaf.symbol().as_ref() == Some(sym) {
                Expr::Const(1.0)
            } else {
                Expr::Const(0.0)
            }
        })
    }

    /// Total time derivative: each variable `x` contributes `der(x)`, each
    /// derivative ref raises its order, parameters and constants vanish.
    pub fn differentiate_time(&self) -> Expr {
        self.derive(&|leaf| match leaf {
            Expr::Var(n) => Expr::Der(n.clone(), 1),
            Expr::Der(n, k) => Expr::Der(n.clone(), k + 1),
            _ => Expr::Const(0.0),
        })
    }

    /// Chain-rule skeleton shared by partial and total derivatives; `leaf`
    /// gives the derivative of each leaf node.
    fn derive(&self, leaf: &dyn Fn(&Expr) -> Expr) -> Expr {
        use BinaryOp::*;
        match self {
            Expr::Unary(op, e) => {
                let de = e.derive(leaf);
                if de.is_zero() {
                    return Expr::Const(0.0);
                }
                let outer = match op {
                    UnaryOp::Neg => return Expr::unary(UnaryOp::Neg, de),
                    UnaryOp::Sin => Expr::cos((**e).clone()),
                    UnaryOp::Cos => Expr::unary(UnaryOp::Neg, Expr::sin((**e).clone())),
                    UnaryOp::Exp => self.clone(),
                };
                Expr::binary(Mul, outer, de)
            }
            Expr::Binary(op, a, b) => {
                let da = a.derive(leaf);
                let db = b.derive(leaf);
                let (a, b) = ((**a).clone(), (**b).clone());
                match op {
                    Add | Sub => Expr::binary(*op, da, db),
                    Mul => Expr::binary(
                        Add,
                        Expr::binary(Mul, da, b),
                        Expr::binary(Mul, a, db),
                    ),
                    Div => {
                        // (a'b - ab') / b^2
                        let num = Expr::binary(
                            Sub,
                            Expr::binary(Mul, da, b.clone()),
                            Expr::binary(Mul, a, db),
                        );
                        Expr::binary(Div, num, Expr::powf(b, 2.0))
                    }
                }
            }
            Expr::Pow(base, p) => {
                let db = base.derive(leaf);
                if db.is_zero() {
                    return Expr::Const(0.0);
                }
                let outer = Expr::binary(
                    Mul,
                    Expr::Const(*p),
                    Expr::powf((**base).clone(), p - 1.0),
                );
                Expr::binary(Mul, outer, db)
            }
            Expr::Const(_) => Expr::Const(0.0),
            other => leaf(other),
        }
    }

    /// Double-precision evaluation; binary operands are evaluated left first.
    pub fn evaluate(&self, b: &Bindings) -> Result<f64, EvalError> {
        match self {
            Expr::Const(c) => Ok(*c),
            Expr::Param(n) | Expr::Var(n) => b
                .get(n)
                .ok_or_else(|| EvalError::Unbound(n.clone())),
            Expr::Der(..) => {
                let key = self.symbol().expect("leaf").key();
                b.get(&key).ok_or(EvalError::Unbound(key))
            }
            Expr::Unary(op, e) => Ok(op.apply(e.evaluate(b)?)),
            Expr::Binary(op, l, r) => {
                let x = l.evaluate(b)?;
                let y = r.evaluate(b)?;
                match op {
                    BinaryOp::Add => Ok(x + y),
                    BinaryOp::Sub => Ok(x - y),
                    BinaryOp::Mul => Ok(x * y),
                    BinaryOp::Div if y == 0.0 => Err(EvalError::DivisionByZero),
                    BinaryOp::Div => Ok(x / y),
                }
            }
            Expr::Pow(e, p) => Ok(pow_value(e.evaluate(b)?, *p)),
        }
    }

    fn precedence(&self) -> u8 {
        match self {
            Expr::Binary(op, ..) => op.precedence(),
            Expr::Unary(UnaryOp::Neg, _) => 3,
            Expr::Pow(..) => 4,
            _ => 5,
        }
    }
}

/// Integer exponents go through `powi` so squares stay exact products.
#[inline]
pub(crate) fn pow_value(x: f64, p: f64) -> f64 {
    if p.fract() == 0.0 && p.abs() <= 64.0 {
        x.powi(p as i32)
    } else {
        x.powf(p)
    }
}

impl std::ops::Add for Expr {
    type Output = Expr;
    fn add(self, rhs: Expr) -> Expr {
        Expr::binary(BinaryOp::Add, self, rhs)
    }
}

impl std::ops::Sub for Expr {
    type Output = Expr;
    fn sub(self, rhs: Expr) -> Expr {
        Expr::binary(BinaryOp::Sub, self, rhs)
    }
}

impl std::ops::Mul for Expr {
    type Output = Expr;
    fn mul(self, rhs: Expr) -> Expr {
        Expr::binary(BinaryOp::Mul, self, rhs)
    }
}

impl std::ops::Div for Expr {
    type Output = Expr;
    fn div(self, rhs: Expr) -> Expr {
        Expr::binary(BinaryOp::Div, self, rhs)
    }
}

impl std::ops::Neg for Expr {
    type Output = Expr;
    fn neg(self) -> Expr {
        Expr::unary(UnaryOp::Neg, self)
    }
}

impl From<f64> for Expr {
    fn from(c: f64) -> Self {
        Expr::Const(c)
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Const(c) if c.is_sign_negative() => write!(f, "(-{})", -c),
            Expr::Const(c) => write!(f, "{c}"),
            Expr::Param(n) | Expr::Var(n) => f.write_str(n),
            Expr::Der(..) => write!(f, "{}", self.symbol().expect("leaf")),
            Expr::Unary(UnaryOp::Neg, e) => {
                // Operand of a prefix minus must bind at least as tight as a base.
                if e.precedence() >= 5 && !matches!(**e, Expr::Const(_)) {
                    write!(f, "-{e}")
                } else {
                    write!(f, "-({e})")
                }
            }
            Expr::Unary(op, e) => write!(f, "{}({e})", op.name()),
            Expr::Binary(op, a, b) => {
                let p = op.precedence();
                if a.precedence() < p {
                    write!(f, "({a})")?;
                } else {
                    write!(f, "{a}")?;
                }
                write!(f, " {} ", op.symbol())?;
                // Right operand of the same precedence needs parentheses
                // because the grammar associates to the left.
                if b.precedence() <= p {
                    write!(f, "({b})")
                } else {
                    write!(f, "{b}")
                }
            }
            Expr::Pow(b, p) => {
                if b.precedence() < 5 {
                    write!(f, "({b})")?;
                } else {
                    write!(f, "{b}")?;
                }
                if p.is_sign_negative() {
                    write!(f, "^(-{})", -p)
                } else {
                    write!(f, "^{p}")
                }
            }
        }
    }
}

/// Name → value association used by [`Expr::evaluate`].
///
/// Derivative refs are stored under their printed key, e.g. `der(x)`.
#[derive(Debug, Clone, Default)]
pub struct Bindings {
    values: HashMap<String, f64>,
}

impl Bindings {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn set(&mut self, name: impl Into<String>, value: f64) -> &mut Self {
        self.values.insert(name.into(), value);
        self
    }

    pub fn with(mut self, name: impl Into<String>, value: f64) -> Self {
        self.set(name, value);
        self
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        self.values.get(name).copied()
    }
}

impl<S: Into<String>> FromIterator<(S, f64)> for Bindings {
    fn from_iter<I: IntoIterator<Item = (S, f64)>>(iter: I) -> Self {
        Bindings {
            values: iter.into_iter().map(|(k, v)| (k.into(), v)).collect(),
        }
    }
}
