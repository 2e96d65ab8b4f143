//! Dense state-vector simulation: states with named registers, operators,
//! Kronecker products, truncated-Taylor time evolution and post-selection.
//!
//! Basis ordering is big-endian over registers: in `a ⊗ b` the index is
//! `ia * dim(b) + ib`, so the first register holds the most significant
//! qubits.

use nalgebra::DMatrix;
use num_complex::Complex64;

pub type C64 = Complex64;

const NORM_TOL: f64 = 1e-10;
const HERMITIAN_TOL: f64 = 1e-12;
/// Branch probability below which post-selection reports an empty branch:
/// amplitudes under 1e-12 are indistinguishable from round-off.
const EMPTY_BRANCH: f64 = 1e-24;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum QuantumError {
    #[error("dimension {0} is not a power of two")]
    NotPowerOfTwo(usize),
    #[error("dimension mismatch: {0} vs {1}")]
    DimensionMismatch(usize, usize),
    #[error("truncation order must be at least 1, got {0}")]
    TruncationOrder(usize),
    #[error("operator is not Hermitian (max deviation {0:e})")]
    NotHermitian(f64),
    #[error("no register named `{0}`")]
    UnknownRegister(String),
    #[error("outcome {outcome} out of range for register `{register}` of width {width}")]
    OutcomeOutOfRange {
        register: String,
        outcome: usize,
        width: usize,
    },
    #[error("selected branch is empty (probability {0:e})")]
    EmptyBranch(f64),
    #[error("input vector is not normalized (norm {0})")]
    NotNormalized(f64),
}

/// A named group of contiguous qubits.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Register {
    pub name: String,
    /// Index of the register's first (most significant) qubit.
    pub offset: usize,
    pub width: usize,
}

/// Amplitude vector over `2^qubits` basis states.
///
/// `normalized` is false for intermediates produced by non-unitary steps
/// (truncated evolution); post-selection renormalizes.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantumState {
    amps: Vec<C64>,
    qubits: usize,
    registers: Vec<Register>,
    normalized: bool,
}

fn qubits_for(dim: usize) -> Result<usize, QuantumError> {
    if dim == 0 || !dim.is_power_of_two() {
        return Err(QuantumError::NotPowerOfTwo(dim));
    }
    Ok(dim.trailing_zeros() as usize)
}

pub fn norm(v: &[C64]) -> f64 {
    v.iter().map(|a| a.norm_sqr()).sum::<f64>().sqrt()
}

impl QuantumState {
    /// A state with a single register spanning all qubits. The vector must
    /// have unit norm.
    pub fn new(name: &str, amps: Vec<C64>) -> Result<Self, QuantumError> {
        let n = norm(&amps);
        if (n - 1.0).abs() > NORM_TOL {
            return Err(QuantumError::NotNormalized(n));
        }
        let mut s = Self::unnormalized(name, amps)?;
        s.normalized = true;
        Ok(s)
    }

    /// Like [`QuantumState::new`] but accepts any norm and marks the state
    /// as an unnormalized intermediate.
    pub fn unnormalized(name: &str, amps: Vec<C64>) -> Result<Self, QuantumError> {
        let qubits = qubits_for(amps.len())?;
        Ok(QuantumState {
            amps,
            qubits,
            registers: vec![Register {
                name: name.to_string(),
                offset: 0,
                width: qubits,
            }],
            normalized: false,
        })
    }

    /// Computational basis state `|index⟩` on `qubits` qubits.
    pub fn basis(name: &str, qubits: usize, index: usize) -> Self {
        let mut amps = vec![C64::new(0.0, 0.0); 1 << qubits];
        amps[index] = C64::new(1.0, 0.0);
        QuantumState {
            amps,
            qubits,
            registers: vec![Register {
                name: name.to_string(),
                offset: 0,
                width: qubits,
            }],
            normalized: true,
        }
    }

    pub fn from_real(name: &str, v: &[f64]) -> Result<Self, QuantumError> {
        Self::new(name, v.iter().map(|&x| C64::new(x, 0.0)).collect())
    }

    pub fn qubits(&self) -> usize {
        self.qubits
    }

    pub fn dim(&self) -> usize {
        self.amps.len()
    }

    pub fn registers(&self) -> &[Register] {
        &self.registers
    }

    pub fn register(&self, name: &str) -> Option<&Register> {
        self.registers.iter().find(|r| r.name == name)
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    pub fn norm(&self) -> f64 {
        norm(&self.amps)
    }

    /// Exact copy of the amplitude vector.
    pub fn amplitudes(&self) -> Vec<C64> {
        self.amps.clone()
    }

    pub fn as_slice(&self) -> &[C64] {
        &self.amps
    }

    /// Replace the amplitude vector, keeping the register layout. The result
    /// is marked unnormalized.
    pub fn with_amplitudes(&self, amps: Vec<C64>) -> Result<Self, QuantumError> {
        if amps.len() != self.amps.len() {
            return Err(QuantumError::DimensionMismatch(amps.len(), self.amps.len()));
        }
        Ok(QuantumState {
            amps,
            qubits: self.qubits,
            registers: self.registers.clone(),
            normalized: false,
        })
    }

    /// Rename the single register of a one-register state.
    pub fn renamed(mut self, name: &str) -> Self {
        if self.registers.len() == 1 {
            self.registers[0].name = name.to_string();
        }
        self
    }

    /// Basis value of `reg` inside the full basis index `idx`.
    fn field(&self, reg: &Register, idx: usize) -> usize {
        let shift = self.qubits - reg.offset - reg.width;
        (idx >> shift) & ((1 << reg.width) - 1)
    }

    /// Probability mass of `register == outcome`.
    pub fn probability(&self, register: &str, outcome: usize) -> Result<f64, QuantumError> {
        let reg = self.lookup(register, outcome)?;
        Ok(self
            .amps
            .iter()
            .enumerate()
            .filter(|(i, _)| self.field(reg, *i) == outcome)
            .map(|(_, a)| a.norm_sqr())
            .sum::<f64>()
            / self.norm().powi(2))
    }

    fn lookup(&self, register: &str, outcome: usize) -> Result<&Register, QuantumError> {
        let reg = self
            .register(register)
            .ok_or_else(|| QuantumError::UnknownRegister(register.to_string()))?;
        if outcome >= 1 << reg.width {
            return Err(QuantumError::OutcomeOutOfRange {
                register: register.to_string(),
                outcome,
                width: reg.width,
            });
        }
        Ok(reg)
    }

    /// Unnormalized projection onto `register == outcome`, with the register
    /// removed from the layout.
    pub fn project(&self, register: &str, outcome: usize) -> Result<QuantumState, QuantumError> {
        let reg = self.lookup(register, outcome)?.clone();
        let amps: Vec<C64> = self
            .amps
            .iter()
            .enumerate()
            .filter(|(i, _)| self.field(&reg, *i) == outcome)
            .map(|(_, a)| *a)
            .collect();
        let registers = self
            .registers
            .iter()
            .filter(|r| r.name != reg.name)
            .map(|r| Register {
                offset: if r.offset > reg.offset {
                    r.offset - reg.width
                } else {
                    r.offset
                },
                ..r.clone()
            })
            .collect();
        Ok(QuantumState {
            amps,
            qubits: self.qubits - reg.width,
            registers,
            normalized: false,
        })
    }

    /// Keep the `register == outcome` branch and renormalize. Returns the
    /// conditional state on the remaining registers and the branch
    /// probability relative to the (possibly unnormalized) input.
    pub fn postselect(
        &self,
        register: &str,
        outcome: usize,
    ) -> Result<(QuantumState, f64), QuantumError> {
        let total = self.norm().powi(2);
        let mut branch = self.project(register, outcome)?;
        let mass = branch.norm().powi(2);
        let p = if total > 0.0 { mass / total } else { 0.0 };
        if p < EMPTY_BRANCH {
            return Err(QuantumError::EmptyBranch(p));
        }
        let scale = 1.0 / mass.sqrt();
        branch.amps.iter_mut().for_each(|a| *a *= scale);
        branch.normalized = true;
        Ok((branch, p))
    }
}

/// Free-function form of [`QuantumState::postselect`].
pub fn postselect(
    s: &QuantumState,
    register: &str,
    outcome: usize,
) -> Result<(QuantumState, f64), QuantumError> {
    s.postselect(register, outcome)
}

pub fn amplitudes(s: &QuantumState) -> Vec<C64> {
    s.amplitudes()
}

/// Matrix-vector action; lets evolution run on dense or structured
/// Hamiltonians alike.
pub trait Operator {
    fn dim(&self) -> usize;
    fn apply(&self, x: &[C64]) -> Vec<C64>;
}

/// Dense square complex matrix, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearOperator {
    dim: usize,
    data: Vec<C64>,
    hermitian: bool,
}

impl LinearOperator {
    pub fn zeros(dim: usize) -> Self {
        LinearOperator {
            dim,
            data: vec![C64::new(0.0, 0.0); dim * dim],
            hermitian: true,
        }
    }

    pub fn identity(dim: usize) -> Self {
        Self::from_fn(dim, |i, j| if i == j { C64::new(1.0, 0.0) } else { C64::new(0.0, 0.0) })
    }

    /// Builds the matrix and sets the Hermitian flag by inspection.
    pub fn from_fn(dim: usize, f: impl Fn(usize, usize) -> C64) -> Self {
        let mut data = Vec::with_capacity(dim * dim);
        for i in 0..dim {
            for j in 0..dim {
                data.push(f(i, j));
            }
        }
        let mut op = LinearOperator {
            dim,
            data,
            hermitian: false,
        };
        op.hermitian = op.hermitian_deviation() <= HERMITIAN_TOL;
        op
    }

    pub fn from_real(rows: &[Vec<f64>]) -> Self {
        let dim = rows.len();
        Self::from_fn(dim, |i, j| C64::new(rows[i][j], 0.0))
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> C64 {
        self.data[i * self.dim + j]
    }

    /// Sets an entry; the Hermitian flag is recomputed lazily by
    /// [`LinearOperator::refresh_hermitian`].
    pub fn set(&mut self, i: usize, j: usize, v: C64) {
        self.data[i * self.dim + j] = v;
        self.hermitian = false;
    }

    pub fn refresh_hermitian(&mut self) {
        self.hermitian = self.hermitian_deviation() <= HERMITIAN_TOL;
    }

    pub fn is_hermitian(&self) -> bool {
        self.hermitian
    }

    /// max |M - M†| entry.
    pub fn hermitian_deviation(&self) -> f64 {
        let mut worst = 0.0f64;
        for i in 0..self.dim {
            for j in i..self.dim {
                worst = worst.max((self.get(i, j) - self.get(j, i).conj()).norm());
            }
        }
        worst
    }

    pub fn adjoint(&self) -> Self {
        Self::from_fn(self.dim, |i, j| self.get(j, i).conj())
    }

    pub fn scale(&self, c: C64) -> Self {
        let mut out = self.clone();
        out.data.iter_mut().for_each(|a| *a *= c);
        out.refresh_hermitian();
        out
    }

    pub fn add(&self, other: &Self) -> Self {
        assert_eq!(self.dim, other.dim);
        Self::from_fn(self.dim, |i, j| self.get(i, j) + other.get(i, j))
    }

    pub fn matmul(&self, other: &Self) -> Self {
        assert_eq!(self.dim, other.dim);
        let n = self.dim;
        let mut data = vec![C64::new(0.0, 0.0); n * n];
        for i in 0..n {
            for k in 0..n {
                let a = self.data[i * n + k];
                if a == C64::new(0.0, 0.0) {
                    continue;
                }
                for j in 0..n {
                    data[i * n + j] += a * other.data[k * n + j];
                }
            }
        }
        let mut op = LinearOperator {
            dim: n,
            data,
            hermitian: false,
        };
        op.refresh_hermitian();
        op
    }

    /// Largest entry magnitude of `self - other`.
    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max)
    }

    /// Frobenius norm; an upper bound on the spectral norm.
    pub fn frobenius_norm(&self) -> f64 {
        norm(&self.data)
    }

    pub fn to_dmatrix(&self) -> DMatrix<C64> {
        DMatrix::from_row_slice(self.dim, self.dim, &self.data)
    }

    pub fn from_dmatrix(m: &DMatrix<C64>) -> Self {
        assert_eq!(m.nrows(), m.ncols());
        Self::from_fn(m.nrows(), |i, j| m[(i, j)])
    }

    pub fn apply_state(&self, s: &QuantumState) -> Result<QuantumState, QuantumError> {
        if s.dim() != self.dim {
            return Err(QuantumError::DimensionMismatch(s.dim(), self.dim));
        }
        s.with_amplitudes(self.apply(s.as_slice()))
    }
}

impl Operator for LinearOperator {
    fn dim(&self) -> usize {
        self.dim
    }

    fn apply(&self, x: &[C64]) -> Vec<C64> {
        let n = self.dim;
        (0..n)
            .map(|i| {
                let row = &self.data[i * n..(i + 1) * n];
                row.iter().zip(x).fold(C64::new(0.0, 0.0), |acc, (a, b)| acc + a * b)
            })
            .collect()
    }
}

/// Kronecker product of two states or two operators.
pub trait Tensor: Sized {
    fn tensor(&self, other: &Self) -> Self;
}

impl Tensor for QuantumState {
    fn tensor(&self, other: &Self) -> Self {
        let mut amps = Vec::with_capacity(self.dim() * other.dim());
        for a in &self.amps {
            for b in &other.amps {
                amps.push(a * b);
            }
        }
        let mut registers = self.registers.clone();
        registers.extend(other.registers.iter().map(|r| Register {
            offset: r.offset + self.qubits,
            ..r.clone()
        }));
        QuantumState {
            amps,
            qubits: self.qubits + other.qubits,
            registers,
            normalized: self.normalized && other.normalized,
        }
    }
}

impl Tensor for LinearOperator {
    fn tensor(&self, other: &Self) -> Self {
        let (n, m) = (self.dim, other.dim);
        let mut op = LinearOperator {
            dim: n * m,
            data: vec![C64::new(0.0, 0.0); n * m * n * m],
            hermitian: false,
        };
        for i in 0..n {
            for j in 0..n {
                let a = self.get(i, j);
                if a == C64::new(0.0, 0.0) {
                    continue;
                }
                for k in 0..m {
                    for l in 0..m {
                        op.data[(i * m + k) * n * m + (j * m + l)] = a * other.get(k, l);
                    }
                }
            }
        }
        op.hermitian = self.hermitian && other.hermitian;
        op
    }
}

pub fn tensor<T: Tensor>(a: &T, b: &T) -> T {
    a.tensor(b)
}

/// Truncated Taylor propagator Σ_{j=0..K} (-iHt)^j / j!.
pub fn evolve(h: &LinearOperator, t: f64, order: usize) -> Result<LinearOperator, QuantumError> {
    if order < 1 {
        return Err(QuantumError::TruncationOrder(order));
    }
    if !h.is_hermitian() {
        return Err(QuantumError::NotHermitian(h.hermitian_deviation()));
    }
    let step = h.scale(C64::new(0.0, -t));
    let mut term = LinearOperator::identity(h.dim());
    let mut sum = term.clone();
    for j in 1..=order {
        term = term.matmul(&step).scale(C64::new(1.0 / j as f64, 0.0));
        sum = sum.add(&term);
    }
    sum.refresh_hermitian();
    Ok(sum)
}

/// Apply the truncated propagator to a state without forming it.
///
/// Hermiticity of `h` is the caller's contract here; the result is marked
/// unnormalized since truncation breaks unitarity.
pub fn evolve_state(
    h: &dyn Operator,
    t: f64,
    order: usize,
    s: &QuantumState,
) -> Result<QuantumState, QuantumError> {
    if order < 1 {
        return Err(QuantumError::TruncationOrder(order));
    }
    if h.dim() != s.dim() {
        return Err(QuantumError::DimensionMismatch(s.dim(), h.dim()));
    }
    let mut term = s.amplitudes();
    let mut sum = term.clone();
    for j in 1..=order {
        let c = C64::new(0.0, -t / j as f64);
        term = h.apply(&term).into_iter().map(|a| a * c).collect();
        for (acc, a) in sum.iter_mut().zip(&term) {
            *acc += a;
        }
    }
    s.with_amplitudes(sum)
}
