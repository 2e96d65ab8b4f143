//! Semi-explicit DAE models `der(x) = f(x, y)`, `0 = g(x, y)`: structural
//! index reduction, conversion to explicit ODE form and consistent
//! initialization.

mod model_file;
mod ode;
mod pantelides;

use std::collections::BTreeSet;

use nalgebra::{DMatrix, DVector};

use crate::expr::{CompiledExpr, EvalError, Expr, SlotMap, Symbol};

pub use model_file::parse_model;
pub use ode::OdeSystem;
pub use pantelides::{pantelides_reduce, IncidenceGraph};

pub const DIFFERENTIATION_BUDGET: u32 = 10;
pub const NEWTON_MAX_ITER: usize = 50;
pub const NEWTON_TOL: f64 = 1e-10;
pub const MAX_CONDITION: f64 = 1e12;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum DaeError {
    #[error("model line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("`{0}` is declared twice")]
    Duplicate(String),
    #[error("undeclared name `{0}`")]
    Undeclared(String),
    #[error("no differential equation for state `{0}`")]
    MissingDerivative(String),
    #[error("{equations} equations for {unknowns} unknowns")]
    EquationCount { equations: usize, unknowns: usize },
    #[error("structurally singular after {rounds} differentiation rounds; unmatched: {unmatched:?}")]
    Structural { rounds: u32, unmatched: Vec<String> },
    #[error("algebraic Jacobian is singular (condition {condition:e}); nearly dependent: {constraints:?}")]
    Singular {
        condition: f64,
        constraints: Vec<String>,
    },
    #[error("Newton did not converge in {iterations} iterations (residual {residual:e})")]
    Newton { iterations: usize, residual: f64 },
    #[error("unsupported model structure: {0}")]
    Unsupported(String),
    #[error("unknown parameter `{0}`")]
    UnknownParameter(String),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("non-finite value while evaluating the model")]
    NonFinite,
    #[error(transparent)]
    Eval(#[from] EvalError),
}

/// An equation appended by index reduction: the time derivative of `parent`
/// (an index into [`DaeSystem::residuals`]).
#[derive(Debug, Clone, PartialEq)]
pub struct DerivedEquation {
    pub residual: Expr,
    pub parent: usize,
    pub round: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DaeSystem {
    pub states: Vec<String>,
    pub algebraics: Vec<String>,
    pub parameters: Vec<(String, f64)>,
    pub state_init: Vec<f64>,
    pub algebraic_guess: Vec<f64>,
    /// `f[i]` is the right-hand side of `der(states[i])`.
    pub f: Vec<Expr>,
    /// Algebraic residuals `0 = g[k]`.
    pub g: Vec<Expr>,
    pub g_labels: Vec<String>,
    pub derived: Vec<DerivedEquation>,
}

impl DaeSystem {
    /// Validates declarations and re-tags parameter references.
    pub fn new(
        states: Vec<(String, f64)>,
        algebraics: Vec<(String, f64)>,
        parameters: Vec<(String, f64)>,
        f: Vec<Expr>,
        g: Vec<Expr>,
    ) -> Result<Self, DaeError> {
        let mut seen = BTreeSet::new();
        for name in states
            .iter()
            .chain(&algebraics)
            .chain(&parameters)
            .map(|(n, _)| n)
        {
            if !seen.insert(name.clone()) {
                return Err(DaeError::Duplicate(name.clone()));
            }
        }
        if f.len() != states.len() {
            return Err(DaeError::EquationCount {
                equations: f.len(),
                unknowns: states.len(),
            });
        }
        if g.len() != algebraics.len() {
            return Err(DaeError::EquationCount {
                equations: f.len() + g.len(),
                unknowns: states.len() + algebraics.len(),
            });
        }
        let pnames: Vec<&str> = parameters.iter().map(|(n, _)| n.as_str()).collect();
        let retag = |e: Expr| e.with_parameters(&pnames);
        let f: Vec<Expr> = f.into_iter().map(retag).collect();
        let g: Vec<Expr> = g.into_iter().map(retag).collect();
        for e in f.iter().chain(&g) {
            for sym in e.symbols() {
                let name = match &sym {
                    Symbol::Name(n) | Symbol::Der(n, _) => n,
                };
                if !seen.contains(name) {
                    return Err(DaeError::Undeclared(name.clone()));
                }
            }
        }
        let g_labels = (1..=g.len()).map(|k| format!("g{k}")).collect();
        Ok(DaeSystem {
            state_init: states.iter().map(|(_, v)| *v).collect(),
            states: states.into_iter().map(|(n, _)| n).collect(),
            algebraic_guess: algebraics.iter().map(|(_, v)| *v).collect(),
            algebraics: algebraics.into_iter().map(|(n, _)| n).collect(),
            parameters,
            f,
            g,
            g_labels,
            derived: Vec::new(),
        })
    }

    pub fn with_labels(mut self, labels: Vec<String>) -> Self {
        assert_eq!(labels.len(), self.g.len());
        self.g_labels = labels;
        self
    }

    pub fn parameter_names(&self) -> Vec<String> {
        self.parameters.iter().map(|(n, _)| n.clone()).collect()
    }

    pub fn parameter_values(&self) -> Vec<f64> {
        self.parameters.iter().map(|(_, v)| *v).collect()
    }

    pub fn set_parameter(&mut self, name: &str, value: f64) -> Result<(), DaeError> {
        let slot = self
            .parameters
            .iter_mut()
            .find(|(n, _)| n == name)
            .ok_or_else(|| DaeError::UnknownParameter(name.to_string()))?;
        slot.1 = value;
        Ok(())
    }

    /// All equations in residual form: `der(x_i) - f_i`, then `g_k`, then
    /// derived equations in creation order.
    pub fn residuals(&self) -> Vec<Expr> {
        self.states
            .iter()
            .zip(&self.f)
            .map(|(x, f)| Expr::der(x.clone(), 1) - f.clone())
            .chain(self.g.iter().cloned())
            .chain(self.derived.iter().map(|d| d.residual.clone()))
            .collect()
    }

    /// Equation labels matching [`DaeSystem::residuals`].
    pub fn equation_labels(&self) -> Vec<String> {
        let mut labels: Vec<String> = self.states.iter().map(|x| format!("der({x})")).collect();
        labels.extend(self.g_labels.iter().cloned());
        for d in &self.derived {
            let parent = labels[d.parent].clone();
            labels.push(format!("d/dt[{parent}]"));
        }
        labels
    }

    /// For each algebraic equation, the chain of residual indices from the
    /// original constraint through its successive derivatives.
    pub fn constraint_families(&self) -> Vec<Vec<usize>> {
        let base = self.states.len();
        (0..self.g.len())
            .map(|k| {
                let mut chain = vec![base + k];
                loop {
                    let last = *chain.last().expect("non-empty");
                    match self.derived.iter().position(|d| d.parent == last) {
                        Some(i) => chain.push(base + self.g.len() + i),
                        None => break chain,
                    }
                }
            })
            .collect()
    }

    /// Substitutes every state derivative `der(x, m)` by the `(m-1)`-th time
    /// derivative of its right-hand side, leaving algebraic derivatives.
    pub(crate) fn eliminate_state_derivatives(&self, e: &Expr) -> Expr {
        let mut cache: Vec<Vec<Expr>> = self.f.iter().map(|f| vec![f.clone()]).collect();
        self.eliminate_with(e, &mut cache)
    }

    fn eliminate_with(&self, e: &Expr, cache: &mut Vec<Vec<Expr>>) -> Expr {
        let mut needed = Vec::new();
        e.visit(&mut |node| {
            if let Expr::Der(n, m) = node {
                if let Some(i) = self.states.iter().position(|s| s == n) {
                    needed.push((i, *m));
                }
            }
        });
        for (i, m) in needed {
            while cache[i].len() < m as usize {
                let next = cache[i].last().expect("seeded").differentiate_time();
                let next = self.eliminate_with(&next, cache);
                cache[i].push(next);
            }
        }
        e.map_leaves(&|leaf| match leaf {
            Expr::Der(n, m) => self
                .states
                .iter()
                .position(|s| s == n)
                .map(|i| cache[i][*m as usize - 1].clone()),
            _ => None,
        })
    }

    /// Per family: the highest version free of algebraic derivatives, with
    /// state derivatives eliminated. These pin `y` given `x`.
    pub fn algebraic_constraints(&self) -> Vec<Expr> {
        let all = self.residuals();
        self.constraint_families()
            .iter()
            .map(|chain| {
                chain
                    .iter()
                    .rev()
                    .map(|&i| self.eliminate_state_derivatives(&all[i]))
                    .find(|h| !self.has_algebraic_derivative(h))
                    .unwrap_or_else(|| self.eliminate_state_derivatives(&all[chain[0]]))
            })
            .collect()
    }

    fn has_algebraic_derivative(&self, e: &Expr) -> bool {
        e.symbols()
            .iter()
            .any(|s| matches!(s, Symbol::Der(n, _) if self.algebraics.contains(n)))
    }

    /// Slot layout `[x, y, params]`.
    pub(crate) fn slots(&self) -> SlotMap {
        let mut s = SlotMap::new();
        for n in self.states.iter().chain(&self.algebraics) {
            s.insert(Symbol::name(n.clone()));
        }
        for (n, _) in &self.parameters {
            s.insert(Symbol::name(n.clone()));
        }
        s
    }
}

/// Newton iteration on the algebraic constraints for `y` at fixed `x`.
pub fn consistent_initialize(
    d: &DaeSystem,
    x0: &[f64],
    y_guess: &[f64],
) -> Result<Vec<f64>, DaeError> {
    let solver = ConstraintSolver::new(d)?;
    let mut values = solver.layout(x0, y_guess, &d.parameter_values())?;
    solver.solve(&mut values)?;
    let nx = d.states.len();
    Ok(values[nx..nx + d.algebraics.len()].to_vec())
}

/// Compiled constraints and their `y`-Jacobian over the `[x, y, params]`
/// slot layout.
#[derive(Debug, Clone)]
pub(crate) struct ConstraintSolver {
    nx: usize,
    ny: usize,
    residuals: Vec<CompiledExpr>,
    jacobian: Vec<Vec<CompiledExpr>>,
    labels: Vec<String>,
}

impl ConstraintSolver {
    pub(crate) fn new(d: &DaeSystem) -> Result<Self, DaeError> {
        let constraints = d.algebraic_constraints();
        if constraints.len() != d.algebraics.len() {
            return Err(DaeError::EquationCount {
                equations: constraints.len(),
                unknowns: d.algebraics.len(),
            });
        }
        let slots = d.slots();
        let residuals = constraints
            .iter()
            .map(|h| CompiledExpr::new(h, &slots))
            .collect::<Result<Vec<_>, _>>()?;
        let jacobian = constraints
            .iter()
            .map(|h| {
                d.algebraics
                    .iter()
                    .map(|y| CompiledExpr::new(&h.differentiate(y), &slots))
                    .collect::<Result<Vec<_>, _>>()
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(ConstraintSolver {
            nx: d.states.len(),
            ny: d.algebraics.len(),
            residuals,
            jacobian,
            labels: d.g_labels.clone(),
        })
    }

    pub(crate) fn layout(&self, x: &[f64], y: &[f64], p: &[f64]) -> Result<Vec<f64>, DaeError> {
        if x.len() != self.nx {
            return Err(DaeError::Dimension {
                expected: self.nx,
                got: x.len(),
            });
        }
        if y.len() != self.ny {
            return Err(DaeError::Dimension {
                expected: self.ny,
                got: y.len(),
            });
        }
        Ok(x.iter().chain(y).chain(p).copied().collect())
    }

    pub(crate) fn residual_norm(&self, values: &[f64]) -> f64 {
        self.residuals
            .iter()
            .map(|r| r.eval(values).abs())
            .fold(0.0, |a, b| if b.is_nan() { f64::NAN } else { a.max(b) })
    }

    /// Solves for the `y` slice of `values` in place.
    pub(crate) fn solve(&self, values: &mut [f64]) -> Result<(), DaeError> {
        let (nx, ny) = (self.nx, self.ny);
        if ny == 0 {
            return Ok(());
        }
        let mut res = self.residual_norm(values);
        for _ in 0..NEWTON_MAX_ITER {
            if res <= NEWTON_TOL {
                return Ok(());
            }
            let r = DVector::from_iterator(ny, self.residuals.iter().map(|c| c.eval(values)));
            let j = DMatrix::from_fn(ny, ny, |k, l| self.jacobian[k][l].eval(values));
            let step = j
                .clone()
                .lu()
                .solve(&r)
                .ok_or_else(|| singular(&j, &self.labels))?;
            let base: Vec<f64> = values[nx..nx + ny].to_vec();
            let mut scale = 1.0;
            loop {
                for l in 0..ny {
                    values[nx + l] = base[l] - scale * step[l];
                }
                let trial = self.residual_norm(values);
                if trial < res || scale < 1e-6 {
                    res = trial;
                    break;
                }
                scale *= 0.5;
            }
            if !res.is_finite() {
                return Err(DaeError::NonFinite);
            }
        }
        if res <= NEWTON_TOL {
            Ok(())
        } else {
            Err(DaeError::Newton {
                iterations: NEWTON_MAX_ITER,
                residual: res,
            })
        }
    }
}

/// 1-norm condition number, infinite when `m` is singular.
pub(crate) fn condition(m: &DMatrix<f64>) -> f64 {
    let norm1 = |a: &DMatrix<f64>| {
        a.column_iter()
            .map(|c| c.iter().map(|x| x.abs()).sum::<f64>())
            .fold(0.0, f64::max)
    };
    match m.clone().try_inverse() {
        Some(inv) => norm1(m) * norm1(&inv),
        None => f64::INFINITY,
    }
}

/// Error naming the constraints that dominate the left null direction.
pub(crate) fn singular(m: &DMatrix<f64>, labels: &[String]) -> DaeError {
    let svd = m.clone().svd(true, false);
    let mut constraints = Vec::new();
    if let Some(u) = svd.u {
        let (idx, _) = svd
            .singular_values
            .iter()
            .enumerate()
            .fold((0, f64::INFINITY), |b, (i, &s)| if s < b.1 { (i, s) } else { b });
        let col = u.column(idx);
        let mut ranked: Vec<(usize, f64)> = col.iter().map(|x| x.abs()).enumerate().collect();
        ranked.sort_by(|a, b| b.1.total_cmp(&a.1));
        constraints = ranked
            .iter()
            .take_while(|(_, w)| *w > 1e-3)
            .take(4)
            .map(|(k, _)| labels.get(*k).cloned().unwrap_or_else(|| format!("g{}", k + 1)))
            .collect();
    }
    DaeError::Singular {
        condition: condition(m),
        constraints,
    }
}

/// Slice-level `max |g|` of the original constraints of `d` at `z = [x; y]`.
pub fn constraint_residual(d: &DaeSystem, z: &[f64]) -> Result<f64, DaeError> {
    let slots = d.slots();
    let values: Vec<f64> = z.iter().copied().chain(d.parameter_values()).collect();
    let mut worst = 0.0f64;
    for g in &d.g {
        worst = worst.max(CompiledExpr::new(g, &slots)?.eval(&values).abs());
    }
    Ok(worst)
}

pub fn to_explicit_ode(d: &DaeSystem) -> Result<OdeSystem, DaeError> {
    OdeSystem::from_dae(d)
}
