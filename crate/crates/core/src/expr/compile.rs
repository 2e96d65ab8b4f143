//! Slot-indexed expression form for hot evaluation loops.

use std::collections::HashMap;

use super::{BinaryOp, EvalError, Expr, Symbol, UnaryOp};

/// Symbol → slot index assignment shared by a family of compiled expressions.
#[derive(Debug, Clone, Default)]
pub struct SlotMap {
    slots: HashMap<Symbol, usize>,
}

impl SlotMap {
    pub fn new() -> Self {
        Self::default()
    }

    /// Assign the next free slot to `sym` (or return its existing slot).
    pub fn insert(&mut self, sym: Symbol) -> usize {
        let next = self.slots.len();
        *self.slots.entry(sym).or_insert(next)
    }

    pub fn get(&self, sym: &Symbol) -> Option<usize> {
        self.slots.get(sym).copied()
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }
}

#[derive(Debug, Clone)]
enum Node {
    Const(f64),
    Slot(usize),
    Unary(UnaryOp, Box<Node>),
    Binary(BinaryOp, Box<Node>, Box<Node>),
    Pow(Box<Node>, f64),
}

/// An expression whose leaves have been resolved to positions in a value slice.
#[derive(Debug, Clone)]
pub struct CompiledExpr {
    root: Node,
}

impl CompiledExpr {
    pub fn new(e: &Expr, slots: &SlotMap) -> Result<Self, EvalError> {
        Ok(CompiledExpr {
            root: lower(e, slots)?,
        })
    }

    pub fn is_zero(&self) -> bool {
        matches!(self.root, Node::Const(c) if c == 0.0)
    }

    /// Evaluate against slot values. Division by zero yields a non-finite
    /// value here; callers check finiteness of their results.
    #[inline]
    pub fn eval(&self, values: &[f64]) -> f64 {
        eval(&self.root, values)
    }
}

fn lower(e: &Expr, slots: &SlotMap) -> Result<Node, EvalError> {
    Ok(match e {
        Expr::Const(c) => Node::Const(*c),
        Expr::Unary(op, a) => Node::Unary(*op, Box::new(lower(a, slots)?)),
        Expr::Binary(op, a, b) => {
            Node::Binary(*op, Box::new(lower(a, slots)?), Box::new(lower(b, slots)?))
        }
        Expr::Pow(a, p) => Node::Pow(Box::new(lower(a, slots)?), *p),
        leaf => {
            let sym = leaf.symbol().expect("leaf");
            Node::Slot(slots.get(&sym).ok_or_else(|| EvalError::Unbound(sym.key()))?)
        }
    })
}

fn eval(n: &Node, v: &[f64]) -> f64 {
    match n {
        Node::Const(c) => *c,
        Node::Slot(i) => v[*i],
        Node::Unary(op, a) => op.apply(eval(a, v)),
        Node::Binary(op, a, b) => {
            let x = eval(a, v);
            let y = eval(b, v);
            match op {
                BinaryOp::Add => x + y,
                BinaryOp::Sub => x - y,
                BinaryOp::Mul => x * y,
                BinaryOp::Div => x / y,
            }
        }
        Node::Pow(a, p) => super::pow_value(eval(a, v), *p),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::{parse_expression, Bindings};

    #[test]
    fn compiled_matches_tree_evaluation() {
        let e = parse_expression("a*sin(x) - der(y)/2 + x^3").unwrap();
        let mut slots = SlotMap::new();
        for s in ["x", "a"] {
            slots.insert(Symbol::name(s));
        }
        slots.insert(Symbol::der("y", 1));
        let c = CompiledExpr::new(&e, &slots).unwrap();
        let b = Bindings::new().with("x", 0.3).with("a", 2.0).with("der(y)", -1.0);
        assert_eq!(c.eval(&[0.3, 2.0, -1.0]), e.evaluate(&b).unwrap());
    }

    #[test]
    fn unresolved_symbol_is_reported() {
        let e = parse_expression("x + q").unwrap();
        let mut slots = SlotMap::new();
        slots.insert(Symbol::name("x"));
        assert_eq!(
            CompiledExpr::new(&e, &slots).unwrap_err(),
            EvalError::Unbound("q".into())
        );
    }
}
