use std::collections::BTreeSet;

use nalgebra::{DMatrix, DVector};

use super::{condition, singular, ConstraintSolver, DaeError, DaeSystem, MAX_CONDITION};
use crate::expr::{CompiledExpr, Expr, SlotMap, Symbol};

/// `dz/dt = f(z)` with either symbolic right-hand sides or a DAE-backed
/// evaluator that solves for the algebraic rates at each call.
#[derive(Debug, Clone)]
pub struct OdeSystem {
    variables: Vec<String>,
    parameters: Vec<String>,
    parameter_values: Vec<f64>,
    rhs: Rhs,
}

#[derive(Debug, Clone)]
enum Rhs {
    Explicit {
        exprs: Vec<Expr>,
        compiled: Vec<CompiledExpr>,
    },
    Implicit(Box<Implicit>),
}

/// Layout `[x, y, der(y), params]`. Rates of `y` solve
/// `J der(y) = -r` where `r` is the differentiated constraint at
/// `der(y) = 0` and `J` its `der(y)`-Jacobian.
#[derive(Debug, Clone)]
struct Implicit {
    nx: usize,
    ny: usize,
    f: Vec<CompiledExpr>,
    rates: Vec<CompiledExpr>,
    rate_jacobian: Vec<Vec<CompiledExpr>>,
    constraints: ConstraintSolver,
    original: Vec<CompiledExpr>,
    labels: Vec<String>,
}

impl OdeSystem {
    pub fn explicit(
        variables: Vec<String>,
        rhs: Vec<Expr>,
        parameters: Vec<(String, f64)>,
    ) -> Result<Self, DaeError> {
        if rhs.len() != variables.len() {
            return Err(DaeError::EquationCount {
                equations: rhs.len(),
                unknowns: variables.len(),
            });
        }
        let names: Vec<String> = parameters.iter().map(|(n, _)| n.clone()).collect();
        let exprs: Vec<Expr> = rhs.into_iter().map(|e| e.with_parameters(&names)).collect();
        let mut slots = SlotMap::new();
        for v in variables.iter().chain(&names) {
            slots.insert(Symbol::name(v.clone()));
        }
        let compiled = exprs
            .iter()
            .map(|e| CompiledExpr::new(e, &slots))
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| match e {
                crate::expr::EvalError::Unbound(n) => DaeError::Undeclared(n),
                other => DaeError::Eval(other),
            })?;
        Ok(OdeSystem {
            variables,
            parameters: names,
            parameter_values: parameters.iter().map(|(_, v)| *v).collect(),
            rhs: Rhs::Explicit { exprs, compiled },
        })
    }

    pub(crate) fn from_dae(d: &DaeSystem) -> Result<Self, DaeError> {
        let (nx, ny) = (d.states.len(), d.algebraics.len());
        let families = d.constraint_families();
        if families.len() != ny {
            return Err(DaeError::EquationCount {
                equations: nx + families.len(),
                unknowns: nx + ny,
            });
        }
        let all = d.residuals();
        let alg: BTreeSet<&String> = d.algebraics.iter().collect();
        let has_rate = |e: &Expr| {
            e.symbols()
                .iter()
                .any(|s| matches!(s, Symbol::Der(n, _) if alg.contains(n)))
        };
        let mut rate_exprs = Vec::with_capacity(ny);
        for chain in &families {
            let top = d.eliminate_state_derivatives(&all[*chain.last().expect("non-empty")]);
            let e = if has_rate(&top) {
                top
            } else {
                d.eliminate_state_derivatives(&top.differentiate_time())
            };
            let higher = e
                .symbols()
                .into_iter()
                .find(|s| matches!(s, Symbol::Der(n, k) if alg.contains(n) && *k > 1));
            if let Some(s) = higher {
                return Err(DaeError::Unsupported(format!(
                    "constraint needs {s}; only first algebraic rates are solved for"
                )));
            }
            rate_exprs.push(e);
        }

        let mut slots = SlotMap::new();
        for n in d.states.iter().chain(&d.algebraics) {
            slots.insert(Symbol::name(n.clone()));
        }
        for n in &d.algebraics {
            slots.insert(Symbol::der(n.clone(), 1));
        }
        for (n, _) in &d.parameters {
            slots.insert(Symbol::name(n.clone()));
        }
        let compile = |e: &Expr| CompiledExpr::new(e, &slots);
        let f = d.f.iter().map(compile).collect::<Result<Vec<_>, _>>()?;
        let rates = rate_exprs.iter().map(compile).collect::<Result<Vec<_>, _>>()?;
        let rate_jacobian = rate_exprs
            .iter()
            .map(|e| {
                d.algebraics
                    .iter()
                    .map(|y| compile(&e.differentiate_wrt(&Symbol::der(y.clone(), 1))))
                    .collect::<Result<Vec<_>, _>>()
            })
            .collect::<Result<Vec<_>, _>>()?;
        let base_slots = d.slots();
        let original = d
            .g
            .iter()
            .map(|g| CompiledExpr::new(g, &base_slots))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(OdeSystem {
            variables: d.states.iter().chain(&d.algebraics).cloned().collect(),
            parameters: d.parameter_names(),
            parameter_values: d.parameter_values(),
            rhs: Rhs::Implicit(Box::new(Implicit {
                nx,
                ny,
                f,
                rates,
                rate_jacobian,
                constraints: ConstraintSolver::new(d)?,
                original,
                labels: d.g_labels.clone(),
            })),
        })
    }

    pub fn dim(&self) -> usize {
        self.variables.len()
    }

    pub fn variables(&self) -> &[String] {
        &self.variables
    }

    /// Number of differential (non-algebraic) entries at the front of `z`.
    pub fn state_count(&self) -> usize {
        match &self.rhs {
            Rhs::Explicit { .. } => self.dim(),
            Rhs::Implicit(imp) => imp.nx,
        }
    }

    pub fn is_explicit(&self) -> bool {
        matches!(self.rhs, Rhs::Explicit { .. })
    }

    /// Symbolic right-hand sides, available for explicit systems.
    pub fn expressions(&self) -> Option<&[Expr]> {
        match &self.rhs {
            Rhs::Explicit { exprs, .. } => Some(exprs),
            Rhs::Implicit(_) => None,
        }
    }

    pub fn parameter_names(&self) -> &[String] {
        &self.parameters
    }

    pub fn parameter_values(&self) -> &[f64] {
        &self.parameter_values
    }

    pub fn parameter(&self, name: &str) -> Option<f64> {
        let i = self.parameters.iter().position(|p| p == name)?;
        Some(self.parameter_values[i])
    }

    pub fn set_parameter(&mut self, name: &str, value: f64) -> Result<(), DaeError> {
        let i = self
            .parameters
            .iter()
            .position(|p| p == name)
            .ok_or_else(|| DaeError::UnknownParameter(name.to_string()))?;
        self.parameter_values[i] = value;
        Ok(())
    }

    /// Slot layout `[z, params]` used by compiled expressions over an
    /// explicit system.
    pub fn slot_map(&self) -> SlotMap {
        let mut slots = SlotMap::new();
        for v in self.variables.iter().chain(&self.parameters) {
            slots.insert(Symbol::name(v.clone()));
        }
        slots
    }

    pub fn slot_values(&self, z: &[f64]) -> Vec<f64> {
        z.iter().chain(&self.parameter_values).copied().collect()
    }

    pub fn rhs(&self, z: &[f64]) -> Result<Vec<f64>, DaeError> {
        if z.len() != self.dim() {
            return Err(DaeError::Dimension {
                expected: self.dim(),
                got: z.len(),
            });
        }
        let out = match &self.rhs {
            Rhs::Explicit { compiled, .. } => {
                let v = self.slot_values(z);
                compiled.iter().map(|c| c.eval(&v)).collect::<Vec<_>>()
            }
            Rhs::Implicit(imp) => imp.rhs(z, &self.parameter_values)?,
        };
        if out.iter().all(|x| x.is_finite()) {
            Ok(out)
        } else {
            Err(DaeError::NonFinite)
        }
    }

    /// Re-solves the algebraic block of `z` for its differential block
    /// (no-op for explicit systems).
    pub fn project(&self, z: &mut [f64]) -> Result<(), DaeError> {
        if let Rhs::Implicit(imp) = &self.rhs {
            let mut values: Vec<f64> = z.iter().chain(&self.parameter_values).copied().collect();
            imp.constraints.solve(&mut values)?;
            z[imp.nx..].copy_from_slice(&values[imp.nx..imp.nx + imp.ny]);
        }
        Ok(())
    }

    /// `max |g(x, y)|` over the original constraints; zero for explicit
    /// systems.
    pub fn constraint_residual(&self, z: &[f64]) -> f64 {
        match &self.rhs {
            Rhs::Explicit { .. } => 0.0,
            Rhs::Implicit(imp) => {
                let values: Vec<f64> = z.iter().chain(&self.parameter_values).copied().collect();
                imp.original
                    .iter()
                    .map(|g| g.eval(&values).abs())
                    .fold(0.0, f64::max)
            }
        }
    }
}

impl Implicit {
    fn rhs(&self, z: &[f64], params: &[f64]) -> Result<Vec<f64>, DaeError> {
        let (nx, ny) = (self.nx, self.ny);
        let mut values = Vec::with_capacity(nx + 2 * ny + params.len());
        values.extend_from_slice(z);
        values.extend(std::iter::repeat_n(0.0, ny));
        values.extend_from_slice(params);
        let mut out: Vec<f64> = self.f.iter().map(|c| c.eval(&values)).collect();
        if ny > 0 {
            let r = DVector::from_iterator(ny, self.rates.iter().map(|c| -c.eval(&values)));
            let j = DMatrix::from_fn(ny, ny, |k, l| self.rate_jacobian[k][l].eval(&values));
            let cond = condition(&j);
            if cond.is_nan() || cond > MAX_CONDITION {
                return Err(singular(&j, &self.labels));
            }
            let ydot = j.lu().solve(&r).ok_or(DaeError::NonFinite)?;
            out.extend(ydot.iter());
        }
        Ok(out)
    }
}
