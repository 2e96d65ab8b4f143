//! Quantum nonlinear ODE stepper.
//!
//! Each step expands the right-hand side to second order around the current
//! state, amplitude-encodes the state, writes `f(z)` onto a pointer-qubit
//! branch by evolving under a measurement Hamiltonian, and advances one
//! forward-Euler step through a simulated HHL solve. Physical magnitudes are
//! carried as classical scale factors next to the unit-norm registers.
//!
//! Register layout for the two-copy space is `data1 ⊗ data2 ⊗ pointer`
//! with the pointer as least significant qubit, so basis index
//! `((v·D) + k)·2 + p` for register dimension `D`.

use crate::classical::{run_schedule, Event, IntegrationError, Trace, TraceMeta};
use crate::dae::{DaeError, OdeSystem};
use crate::expr::{CompiledExpr, Expr};
use crate::hhl::{hermitian_embed, HhlError, HhlSolver};
use crate::qcore::{evolve_state, tensor, LinearOperator, Operator, QuantumError, QuantumState, C64};

const NORM_TOL: f64 = 1e-10;
const FD_GRADIENT_STEP: f64 = 1e-6;
const FD_HESSIAN_STEP: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum QsolveError {
    #[error("state vector is not normalized (norm {0})")]
    NotNormalized(f64),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("epsilon must lie in (0, 0.1], got {0}")]
    Epsilon(f64),
    #[error("step size must be positive, got {0}")]
    Step(f64),
    #[error("function readout branch is empty (probability {0:e})")]
    EmptyBranch(f64),
    #[error(transparent)]
    Quantum(QuantumError),
    #[error(transparent)]
    Hhl(#[from] HhlError),
    #[error(transparent)]
    Model(#[from] DaeError),
}

impl From<QuantumError> for QsolveError {
    fn from(e: QuantumError) -> Self {
        match e {
            QuantumError::EmptyBranch(p) => QsolveError::EmptyBranch(p),
            other => QsolveError::Quantum(other),
        }
    }
}

/// Largest admissible pointer coupling.
pub const MAX_EPSILON: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuantumConfig {
    pub epsilon: f64,
    pub taylor_order: usize,
    pub clock_qubits: u32,
}

impl Default for QuantumConfig {
    fn default() -> Self {
        QuantumConfig {
            epsilon: 1e-3,
            taylor_order: 10,
            clock_qubits: 24,
        }
    }
}

/// Second-order polynomial `f_j(z) = Σ_{v≤k} a[j][v][k] w_v w_k` with
/// `w_0 = 1` and `w_i = z_i - center_i`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticSystem {
    n: usize,
    center: Vec<f64>,
    coeffs: Vec<f64>,
}

impl QuadraticSystem {
    pub fn zeros(n: usize, center: Vec<f64>) -> Self {
        assert_eq!(center.len(), n);
        QuadraticSystem {
            n,
            center,
            coeffs: vec![0.0; n * (n + 1) * (n + 1)],
        }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn center(&self) -> &[f64] {
        &self.center
    }

    fn idx(&self, j: usize, v: usize, k: usize) -> usize {
        assert!((1..=self.n).contains(&j) && v <= self.n && k <= self.n);
        let m = self.n + 1;
        (j - 1) * m * m + v * m + k
    }

    /// Coefficient of `w_v w_k` in equation `j` (1-based; slot 0 is the
    /// constant). Symmetric in `v, k`.
    pub fn coeff(&self, j: usize, v: usize, k: usize) -> f64 {
        let (v, k) = (v.min(k), v.max(k));
        self.coeffs[self.idx(j, v, k)]
    }

    /// Stores into the canonical `v ≤ k` slot.
    pub fn set(&mut self, j: usize, v: usize, k: usize, value: f64) {
        let (v, k) = (v.min(k), v.max(k));
        let i = self.idx(j, v, k);
        self.coeffs[i] = value;
    }

    fn add(&mut self, j: usize, v: usize, k: usize, value: f64) {
        let (v, k) = (v.min(k), v.max(k));
        let i = self.idx(j, v, k);
        self.coeffs[i] += value;
    }

    pub fn evaluate(&self, z: &[f64]) -> Vec<f64> {
        let w: Vec<f64> = std::iter::once(1.0)
            .chain(z.iter().zip(&self.center).map(|(a, b)| a - b))
            .collect();
        (1..=self.n)
            .map(|j| {
                let mut s = 0.0;
                for v in 0..=self.n {
                    for k in v..=self.n {
                        s += self.coeff(j, v, k) * w[v] * w[k];
                    }
                }
                s
            })
            .collect()
    }

    /// The same polynomial in `u = z / scale` about the origin.
    pub fn rebased(&self, scale: f64) -> QuadraticSystem {
        let n = self.n;
        let zb = |i: usize| self.center[i - 1];
        let mut out = QuadraticSystem::zeros(n, vec![0.0; n]);
        for j in 1..=n {
            out.add(j, 0, 0, self.coeff(j, 0, 0));
            for k in 1..=n {
                let a = self.coeff(j, 0, k);
                out.add(j, 0, k, a);
                out.add(j, 0, 0, -a * zb(k));
            }
            for v in 1..=n {
                for k in v..=n {
                    let a = self.coeff(j, v, k);
                    if a == 0.0 {
                        continue;
                    }
                    out.add(j, v, k, a);
                    out.add(j, 0, v, -a * zb(k));
                    out.add(j, 0, k, -a * zb(v));
                    out.add(j, 0, 0, a * zb(v) * zb(k));
                }
            }
            for k in 1..=n {
                let i = out.idx(j, 0, k);
                out.coeffs[i] *= scale;
                for v in 1..=k {
                    let i = out.idx(j, v, k);
                    out.coeffs[i] *= scale * scale;
                }
            }
        }
        out
    }

    fn frobenius(&self) -> f64 {
        self.coeffs.iter().map(|a| a * a).sum::<f64>().sqrt()
    }
}

/// Derivative evaluators for repeated expansion of one system.
#[derive(Debug, Clone)]
pub struct Quadratizer {
    symbolic: Option<Symbolic>,
}

#[derive(Debug, Clone)]
struct Symbolic {
    value: Vec<CompiledExpr>,
    gradient: Vec<Vec<(usize, CompiledExpr)>>,
    hessian: Vec<Vec<(usize, usize, CompiledExpr)>>,
}

impl Quadratizer {
    /// Symbolic derivatives for explicit systems; DAE-backed systems fall
    /// back to central differences.
    pub fn new(ode: &OdeSystem) -> Result<Self, QsolveError> {
        let Some(exprs) = ode.expressions() else {
            return Ok(Quadratizer { symbolic: None });
        };
        let slots = ode.slot_map();
        let vars = ode.variables();
        let compile = |e: &Expr| CompiledExpr::new(e, &slots).map_err(DaeError::from);
        let mut value = Vec::new();
        let mut gradient = Vec::new();
        let mut hessian = Vec::new();
        for f in exprs {
            value.push(compile(f)?);
            let mut g = Vec::new();
            let mut h = Vec::new();
            for (v, xv) in vars.iter().enumerate() {
                let dv = f.differentiate(xv);
                if dv.is_zero() {
                    continue;
                }
                g.push((v, compile(&dv)?));
                for (k, xk) in vars.iter().enumerate().skip(v) {
                    let dvk = dv.differentiate(xk);
                    if !dvk.is_zero() {
                        h.push((v, k, compile(&dvk)?));
                    }
                }
            }
            gradient.push(g);
            hessian.push(h);
        }
        Ok(Quadratizer {
            symbolic: Some(Symbolic {
                value,
                gradient,
                hessian,
            }),
        })
    }

    /// Central differences regardless of the system form.
    pub fn finite_difference() -> Self {
        Quadratizer { symbolic: None }
    }

    pub fn expand(&self, ode: &OdeSystem, center: &[f64]) -> Result<QuadraticSystem, QsolveError> {
        let n = ode.dim();
        if center.len() != n {
            return Err(QsolveError::Dimension {
                expected: n,
                got: center.len(),
            });
        }
        let mut q = QuadraticSystem::zeros(n, center.to_vec());
        match &self.symbolic {
            Some(s) => {
                let vals = ode.slot_values(center);
                for j in 1..=n {
                    q.set(j, 0, 0, s.value[j - 1].eval(&vals));
                    for (v, d) in &s.gradient[j - 1] {
                        q.set(j, 0, v + 1, d.eval(&vals));
                    }
                    for (v, k, d) in &s.hessian[j - 1] {
                        let h = d.eval(&vals);
                        q.set(j, v + 1, k + 1, if v == k { 0.5 * h } else { h });
                    }
                }
            }
            None => finite_difference_expansion(ode, center, &mut q)?,
        }
        if q.coeffs.iter().any(|a| !a.is_finite()) {
            return Err(DaeError::NonFinite.into());
        }
        Ok(q)
    }
}

fn finite_difference_expansion(
    ode: &OdeSystem,
    center: &[f64],
    q: &mut QuadraticSystem,
) -> Result<(), QsolveError> {
    let n = center.len();
    let at = |shifts: &[(usize, f64)]| {
        let mut z = center.to_vec();
        for &(i, s) in shifts {
            z[i] += s;
        }
        ode.rhs(&z)
    };
    let step = |i: usize, h: f64| h * center[i].abs().max(1.0);
    let f0 = at(&[])?;
    for j in 1..=n {
        q.set(j, 0, 0, f0[j - 1]);
    }
    for v in 0..n {
        let h = step(v, FD_GRADIENT_STEP);
        let (p, m) = (at(&[(v, h)])?, at(&[(v, -h)])?);
        for j in 1..=n {
            q.set(j, 0, v + 1, (p[j - 1] - m[j - 1]) / (2.0 * h));
        }
    }
    for v in 0..n {
        let hv = step(v, FD_HESSIAN_STEP);
        for k in v..n {
            let hk = step(k, FD_HESSIAN_STEP);
            let pp = at(&[(v, hv), (k, hk)])?;
            let pm = at(&[(v, hv), (k, -hk)])?;
            let mp = at(&[(v, -hv), (k, hk)])?;
            let mm = at(&[(v, -hv), (k, -hk)])?;
            for j in 1..=n {
                let h = (pp[j - 1] - pm[j - 1] - mp[j - 1] + mm[j - 1]) / (4.0 * hv * hk);
                q.set(j, v + 1, k + 1, if v == k { 0.5 * h } else { h });
            }
        }
    }
    Ok(())
}

pub fn quadratize(ode: &OdeSystem, center: &[f64]) -> Result<QuadraticSystem, QsolveError> {
    Quadratizer::new(ode)?.expand(ode, center)
}

/// Register dimension `2^⌈log2(N+1)⌉`.
pub fn register_dim(n: usize) -> usize {
    (n + 1).next_power_of_two()
}

/// `(|0⟩ + Σ z_j |j⟩)/√2` for unit `z`.
pub fn encode(z: &[f64]) -> Result<QuantumState, QsolveError> {
    let norm = z.iter().map(|x| x * x).sum::<f64>().sqrt();
    if (norm - 1.0).abs() > NORM_TOL {
        return Err(QsolveError::NotNormalized(norm));
    }
    let d = register_dim(z.len());
    let r = std::f64::consts::FRAC_1_SQRT_2;
    let mut amps = vec![C64::new(0.0, 0.0); d];
    amps[0] = C64::new(r, 0.0);
    for (j, x) in z.iter().enumerate() {
        amps[j + 1] = C64::new(x * r, 0.0);
    }
    Ok(QuantumState::new("data", amps)?)
}

pub fn decode(s: &QuantumState, n: usize) -> Vec<f64> {
    let a = s.as_slice();
    (1..=n).map(|j| a[j].re * std::f64::consts::SQRT_2).collect()
}

/// Sparse matrix on the two-copy register space.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseOperator {
    dim: usize,
    entries: Vec<(usize, usize, C64)>,
}

impl SparseOperator {
    pub fn entries(&self) -> &[(usize, usize, C64)] {
        &self.entries
    }

    pub fn to_dense(&self) -> LinearOperator {
        let mut m = LinearOperator::zeros(self.dim);
        for &(i, j, a) in &self.entries {
            m.set(i, j, m.get(i, j) + a);
        }
        m.refresh_hermitian();
        m
    }
}

impl Operator for SparseOperator {
    fn dim(&self) -> usize {
        self.dim
    }

    fn apply(&self, x: &[C64]) -> Vec<C64> {
        let mut out = vec![C64::new(0.0, 0.0); self.dim];
        for &(i, j, a) in &self.entries {
            out[i] += a * x[j];
        }
        out
    }
}

/// `A = Σ a[j][v][k] |j,0⟩⟨v,k|`, reading coefficients as a polynomial in
/// the encoded variables (pass a [`QuadraticSystem::rebased`] system).
pub fn build_a_sparse(q: &QuadraticSystem) -> SparseOperator {
    let n = q.dim();
    let d = register_dim(n);
    let mut entries = Vec::new();
    for j in 1..=n {
        for v in 0..=n {
            for k in v..=n {
                let a = q.coeff(j, v, k);
                if a != 0.0 {
                    entries.push((j * d, v * d + k, C64::new(a, 0.0)));
                }
            }
        }
    }
    SparseOperator {
        dim: d * d,
        entries,
    }
}

pub fn build_a(q: &QuadraticSystem) -> LinearOperator {
    build_a_sparse(q).to_dense()
}

/// `H = iA ⊗ |1⟩⟨0| - iA† ⊗ |0⟩⟨1|` applied without forming the matrix.
#[derive(Debug, Clone)]
pub struct MeasurementHamiltonian {
    a: SparseOperator,
}

impl MeasurementHamiltonian {
    pub fn new(a: SparseOperator) -> Self {
        MeasurementHamiltonian { a }
    }
}

impl Operator for MeasurementHamiltonian {
    fn dim(&self) -> usize {
        2 * self.a.dim
    }

    fn apply(&self, x: &[C64]) -> Vec<C64> {
        let i = C64::new(0.0, 1.0);
        let mut out = vec![C64::new(0.0, 0.0); x.len()];
        for &(r, c, a) in &self.a.entries {
            out[2 * r + 1] += i * a * x[2 * c];
            out[2 * c] -= i * a.conj() * x[2 * r + 1];
        }
        out
    }
}

pub fn build_hamiltonian(a: &LinearOperator) -> LinearOperator {
    let i = C64::new(0.0, 1.0);
    let zero = C64::new(0.0, 0.0);
    LinearOperator::from_fn(2 * a.dim(), |r, c| match (r % 2, c % 2) {
        (1, 0) => i * a.get(r / 2, c / 2),
        (0, 1) => -i * a.get(c / 2, r / 2).conj(),
        _ => zero,
    })
}

/// `|z⟩|z⟩|0⟩_P` with named registers.
pub fn two_copy_state(zstate: &QuantumState) -> QuantumState {
    let a = zstate.clone().renamed("data1");
    let b = zstate.clone().renamed("data2");
    tensor(&tensor(&a, &b), &QuantumState::basis("pointer", 1, 0))
}

/// Readout of `f(z)` for the encoded unit state `zstate` whose physical
/// magnitude is `scale`; `q` is an expansion from [`quadratize`].
///
/// Returns the post-selected data register, with amplitudes at indices
/// `1..=N` proportional to `f`, and the factor `s` such that
/// `f_j = s · Re(amp_j)`.
pub fn eval_f_quantum(
    zstate: &QuantumState,
    q: &QuadraticSystem,
    scale: f64,
    cfg: &QuantumConfig,
) -> Result<(QuantumState, f64), QsolveError> {
    if !(cfg.epsilon > 0.0 && cfg.epsilon <= MAX_EPSILON) {
        return Err(QsolveError::Epsilon(cfg.epsilon));
    }
    let d = register_dim(q.dim());
    if zstate.dim() != d {
        return Err(QsolveError::Dimension {
            expected: d,
            got: zstate.dim(),
        });
    }
    let mut poly = q.rebased(scale);
    let alpha = poly.frobenius();
    if alpha == 0.0 {
        return Err(QsolveError::EmptyBranch(0.0));
    }
    poly.coeffs.iter_mut().for_each(|a| *a /= alpha);
    let h = MeasurementHamiltonian::new(build_a_sparse(&poly));
    let start = two_copy_state(zstate);
    let evolved = evolve_state(&h, cfg.epsilon, cfg.taylor_order, &start)?;
    let (branch, p_pointer) = evolved.postselect("pointer", 1)?;
    let (data, p_copy) = branch.postselect("data2", 0)?;
    // Pointer-1 branch ≈ ε·A|z⟩|z⟩ = (ε/2)·f/α on |j,0⟩.
    let s = alpha * 2.0 / cfg.epsilon * (p_pointer * p_copy).sqrt();
    Ok((data, s))
}

/// `[[I, 0], [-I, I]]` acting on `[z(t); z(t+Δ)]`.
pub fn step_matrix(n: usize) -> LinearOperator {
    LinearOperator::from_fn(2 * n, |i, j| {
        let v = if i == j {
            1.0
        } else if i == j + n {
            -1.0
        } else {
            0.0
        };
        C64::new(v, 0.0)
    })
}

/// Prepared HHL solver for the Euler block system of one dimension.
#[derive(Debug, Clone)]
pub struct EulerStepper {
    n: usize,
    matrix: LinearOperator,
    solver: HhlSolver,
    config: QuantumConfig,
}

impl EulerStepper {
    pub fn new(n: usize, config: QuantumConfig) -> Result<Self, QsolveError> {
        let matrix = step_matrix(n);
        let mut probe = vec![C64::new(0.0, 0.0); 2 * n];
        probe[0] = C64::new(1.0, 0.0);
        let sys = hermitian_embed(&matrix, &probe)?;
        let solver = HhlSolver::auto(&sys.matrix, config.clock_qubits)?;
        Ok(EulerStepper {
            n,
            matrix,
            solver,
            config,
        })
    }

    pub fn config(&self) -> &QuantumConfig {
        &self.config
    }

    pub fn hhl(&self) -> &HhlSolver {
        &self.solver
    }
}

/// One forward-Euler step. `z` is the unit direction of the state and
/// `scale` its magnitude; returns the new direction and magnitude.
pub fn euler_step(
    z: &[f64],
    scale: f64,
    q: &QuadraticSystem,
    dt: f64,
    stepper: &EulerStepper,
) -> Result<(Vec<f64>, f64), QsolveError> {
    let n = stepper.n;
    if dt.is_nan() || dt <= 0.0 {
        return Err(QsolveError::Step(dt));
    }
    if z.len() != n || q.dim() != n {
        return Err(QsolveError::Dimension {
            expected: n,
            got: z.len(),
        });
    }
    let zstate = encode(z)?;
    let f = read_rates(&zstate, q, scale, &stepper.config)?;
    let b: Vec<C64> = z
        .iter()
        .map(|x| scale * x)
        .chain(f.iter().map(|x| dt * x))
        .map(|x| C64::new(x, 0.0))
        .collect();
    let sys = hermitian_embed(&stepper.matrix, &b)?;
    let out = stepper.solver.solve(&sys)?;
    let magnitude = sys.rhs_norm * out.norm;
    let next: Vec<f64> = out.direction[n..].iter().map(|x| x.re * magnitude).collect();
    let r = next.iter().map(|x| x * x).sum::<f64>().sqrt();
    if r == 0.0 {
        let mut unit = vec![0.0; n];
        unit[0] = 1.0;
        return Ok((unit, 0.0));
    }
    Ok((next.iter().map(|x| x / r).collect(), r))
}

/// Pointer readout of `f(z)`. An empty branch is retried with a tenfold
/// stronger coupling up to `MAX_EPSILON`; only then is `f` taken as zero.
fn read_rates(
    zstate: &QuantumState,
    q: &QuadraticSystem,
    scale: f64,
    cfg: &QuantumConfig,
) -> Result<Vec<f64>, QsolveError> {
    let n = q.dim();
    let mut cfg = *cfg;
    loop {
        match eval_f_quantum(zstate, q, scale, &cfg) {
            Ok((data, s)) => return Ok(decode_scaled(&data, n, s)),
            Err(QsolveError::EmptyBranch(_)) if cfg.epsilon < MAX_EPSILON => {
                cfg.epsilon = (cfg.epsilon * 10.0).min(MAX_EPSILON);
            }
            Err(QsolveError::EmptyBranch(_)) => return Ok(vec![0.0; n]),
            Err(e) => return Err(e),
        }
    }
}

fn decode_scaled(data: &QuantumState, n: usize, s: f64) -> Vec<f64> {
    data.as_slice()[1..=n].iter().map(|a| s * a.re).collect()
}

/// Unit direction and magnitude of a physical state.
pub fn split_scale(z: &[f64]) -> (Vec<f64>, f64) {
    let r = z.iter().map(|x| x * x).sum::<f64>().sqrt();
    if r == 0.0 {
        let mut unit = vec![0.0; z.len()];
        if let Some(first) = unit.first_mut() {
            *first = 1.0;
        }
        (unit, 0.0)
    } else {
        (z.iter().map(|x| x / r).collect(), r)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub time: f64,
    /// Unit-norm data-register readout after the step.
    pub readout: Vec<f64>,
    pub scale: f64,
    pub physical: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct QuantumRun {
    pub trace: Trace,
    pub records: Vec<StepRecord>,
}

/// Re-expands, encodes and steps at every grid point.
pub fn integrate(
    ode: &OdeSystem,
    z0: &[f64],
    dt: f64,
    tmax: f64,
    events: &[Event],
    cfg: &QuantumConfig,
) -> Result<QuantumRun, IntegrationError> {
    let fail = |reason: String| IntegrationError {
        trace: Box::new(Trace::new(ode.variables().to_vec(), TraceMeta::default())),
        time: 0.0,
        reason,
    };
    let quadratizer = Quadratizer::new(ode).map_err(|e| fail(e.to_string()))?;
    let stepper = EulerStepper::new(ode.dim(), *cfg).map_err(|e| fail(e.to_string()))?;
    let mut records = Vec::new();
    let meta = TraceMeta {
        method: "quantum".into(),
        dt,
        scenario: String::new(),
    };
    let mut t = 0.0;
    let trace = run_schedule(ode, z0, dt, tmax, events, meta, |sys, z, dt| {
        let step = || -> Result<(Vec<f64>, f64), QsolveError> {
            let q = quadratizer.expand(sys, z)?;
            let (unit, scale) = split_scale(z);
            euler_step(&unit, scale, &q, dt, &stepper)
        };
        let (unit, scale) = step().map_err(|e| e.to_string())?;
        t += dt;
        let physical: Vec<f64> = unit.iter().map(|u| u * scale).collect();
        records.push(StepRecord {
            time: t,
            readout: unit,
            scale,
            physical: physical.clone(),
        });
        Ok(physical)
    })?;
    Ok(QuantumRun { trace, records })
}
