use std::collections::{BTreeMap, BTreeSet};

use super::{DaeError, DaeSystem, DerivedEquation, DIFFERENTIATION_BUDGET};
use crate::expr::{Expr, Symbol};

/// A variable at a derivative level (`0` is the variable itself).
pub type VarLevel = (String, u32);

/// Bipartite equation/variable structure with a matching restricted to the
/// highest derivative of each variable.
#[derive(Debug, Clone)]
pub struct IncidenceGraph {
    /// Variable-levels occurring in each equation.
    pub adjacency: Vec<BTreeSet<VarLevel>>,
    /// Highest level of each unknown.
    pub highest: BTreeMap<String, u32>,
    /// Variable-level → equation.
    pub matching: BTreeMap<VarLevel, usize>,
}

impl IncidenceGraph {
    fn new(unknowns: &[String], residuals: &[Expr]) -> Self {
        let mut g = IncidenceGraph {
            adjacency: Vec::new(),
            highest: unknowns.iter().map(|n| (n.clone(), 0)).collect(),
            matching: BTreeMap::new(),
        };
        for r in residuals {
            g.push(r);
        }
        g
    }

    fn push(&mut self, e: &Expr) -> usize {
        let vars: BTreeSet<VarLevel> = e
            .symbols()
            .into_iter()
            .filter_map(|s| match s {
                Symbol::Name(n) => self.highest.contains_key(&n).then_some((n, 0)),
                Symbol::Der(n, k) => self.highest.contains_key(&n).then_some((n, k)),
            })
            .collect();
        for (n, k) in &vars {
            let h = self.highest.get_mut(n).expect("known unknown");
            *h = (*h).max(*k);
        }
        self.adjacency.push(vars);
        self.adjacency.len() - 1
    }

    fn is_highest(&self, v: &VarLevel) -> bool {
        self.highest[&v.0] == v.1
    }

    /// Builds the graph of `d` and matches every equation whose derivative
    /// has not been taken.
    pub fn of(d: &DaeSystem) -> Self {
        let unknowns: Vec<String> = d.states.iter().chain(&d.algebraics).cloned().collect();
        let mut g = Self::new(&unknowns, &d.residuals());
        let differentiated: BTreeSet<usize> = d.derived.iter().map(|e| e.parent).collect();
        for i in 0..g.adjacency.len() {
            if !differentiated.contains(&i) {
                let mut colour = Colouring::default();
                g.augment(i, &mut colour);
            }
        }
        g
    }

    /// True when every active equation is matched.
    pub fn is_complete(&self, active: &[usize]) -> bool {
        let matched: BTreeSet<usize> = self.matching.values().copied().collect();
        active.iter().all(|e| matched.contains(e))
    }

    fn augment(&mut self, eq: usize, colour: &mut Colouring) -> bool {
        colour.equations.insert(eq);
        let candidates: Vec<VarLevel> = self.adjacency[eq]
            .iter()
            .filter(|v| self.is_highest(v))
            .cloned()
            .collect();
        for v in &candidates {
            if !self.matching.contains_key(v) {
                self.matching.insert(v.clone(), eq);
                return true;
            }
        }
        for v in candidates {
            if colour.variables.contains(&v) {
                continue;
            }
            colour.variables.insert(v.clone());
            let owner = self.matching[&v];
            if self.augment(owner, colour) {
                self.matching.insert(v, eq);
                return true;
            }
        }
        false
    }
}

#[derive(Default)]
struct Colouring {
    equations: BTreeSet<usize>,
    variables: BTreeSet<VarLevel>,
}

/// Structural index reduction by Pantelides' augmenting-path scheme.
/// Added equations are exact time derivatives of existing ones and are
/// recorded with their parent in [`DaeSystem::derived`].
pub fn pantelides_reduce(d: &DaeSystem) -> Result<DaeSystem, DaeError> {
    let mut out = d.clone();
    let mut residuals = out.residuals();
    let unknowns: Vec<String> = d.states.iter().chain(&d.algebraics).cloned().collect();
    let mut graph = IncidenceGraph::new(&unknowns, &residuals);
    // Derivative of each equation, once taken.
    let mut derivative: BTreeMap<usize, usize> = d
        .derived
        .iter()
        .enumerate()
        .map(|(i, e)| (e.parent, d.f.len() + d.g.len() + i))
        .collect();
    let originals = residuals.len();
    for start in 0..originals {
        if derivative.contains_key(&start) {
            continue;
        }
        let mut eq = start;
        let mut rounds = 0;
        loop {
            let mut colour = Colouring::default();
            if graph.augment(eq, &mut colour) {
                break;
            }
            rounds += 1;
            if rounds > DIFFERENTIATION_BUDGET {
                let labels = out.equation_labels();
                let matched: BTreeSet<usize> = graph.matching.values().copied().collect();
                let unmatched = (0..residuals.len())
                    .filter(|e| !derivative.contains_key(e) && !matched.contains(e))
                    .map(|e| labels.get(e).cloned().unwrap_or_else(|| format!("eq{e}")))
                    .collect();
                return Err(DaeError::Structural {
                    rounds: DIFFERENTIATION_BUDGET,
                    unmatched,
                });
            }
            for v in &colour.variables {
                let h = graph.highest.get_mut(&v.0).expect("known");
                *h = (*h).max(v.1 + 1);
            }
            for &e in &colour.equations {
                let de = residuals[e].differentiate_time();
                residuals.push(de.clone());
                let idx = graph.push(&de);
                derivative.insert(e, idx);
                out.derived.push(DerivedEquation {
                    residual: de,
                    parent: e,
                    round: rounds,
                });
            }
            for v in &colour.variables {
                let owner = graph.matching[v];
                graph
                    .matching
                    .insert((v.0.clone(), v.1 + 1), derivative[&owner]);
            }
            eq = derivative[&eq];
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::parse_expression;

    fn sys(f: &[&str], g: &[&str], params: &[(&str, f64)]) -> DaeSystem {
        let states = (0..f.len()).map(|i| (format!("x{}", i + 1), 0.0)).collect();
        let algs = (0..g.len()).map(|i| (format!("y{}", i + 1), 0.0)).collect();
        DaeSystem::new(
            states,
            algs,
            params.iter().map(|(n, v)| (n.to_string(), *v)).collect(),
            f.iter().map(|s| parse_expression(s).unwrap()).collect(),
            g.iter().map(|s| parse_expression(s).unwrap()).collect(),
        )
        .unwrap()
    }

    #[test]
    fn index_one_is_unchanged() {
        let d = sys(&["-x1"], &["x1 + y1 - 1"], &[]);
        let r = pantelides_reduce(&d).unwrap();
        assert_eq!(r, d);
    }

    #[test]
    fn index_two_adds_one_derivative() {
        let d = sys(&["y1"], &["x1 - p"], &[("p", 3.0)]);
        let r = pantelides_reduce(&d).unwrap();
        assert_eq!(r.derived.len(), 1);
        assert_eq!(r.derived[0].parent, 1);
        assert_eq!(r.derived[0].round, 1);
        assert_eq!(r.derived[0].residual, Expr::der("x1", 1));
        let constraints = r.algebraic_constraints();
        assert_eq!(constraints, vec![Expr::var("y1")]);
    }

    #[test]
    fn structural_singularity_is_diagnosed() {
        // y1 appears nowhere: no differentiation can match it.
        let d = sys(&["-x1"], &["x1 - 1"], &[]);
        match pantelides_reduce(&d) {
            Err(DaeError::Structural { unmatched, .. }) => assert!(!unmatched.is_empty()),
            other => panic!("unexpected {other:?}"),
        }
    }
}
