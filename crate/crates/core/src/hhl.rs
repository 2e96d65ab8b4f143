//! Simulated HHL linear solver.
//!
//! Phase estimation is emulated from an exact eigendecomposition: each
//! eigenphase `λt/2π` is rounded to the nearest clock bin, and the rounded
//! eigenvalue drives the conditioned ancilla rotation. All-positive spectra
//! use the unsigned clock window `[0, 1)`; mixed-sign spectra use two's
//! complement `[-1/2, 1/2)`.

use std::f64::consts::PI;

use nalgebra::DMatrix;

use crate::qcore::{tensor, LinearOperator, QuantumError, QuantumState, C64};

/// Clock width used by [`choose_config`] when the spectrum is not dyadic.
pub const DEFAULT_CLOCK_QUBITS: u32 = 8;
const MAX_DYADIC_CLOCK_QUBITS: u32 = 16;
const DYADIC_TOL: f64 = 1e-8;
const ROTATION_MARGIN: f64 = 0.9;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum HhlError {
    #[error("matrix is not Hermitian (max deviation {0:e})")]
    NotHermitian(f64),
    #[error("eigenvalue {eigenvalue} lies outside the clock window for t = {time}")]
    OutsideWindow { eigenvalue: f64, time: f64 },
    #[error("eigenvalue {0} rounds to the zero clock bin")]
    Unresolved(f64),
    #[error("rotation scale {scale} exceeds smallest estimated |eigenvalue| {smallest}")]
    RotationScale { scale: f64, smallest: f64 },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("dimension mismatch: {0} vs {1}")]
    DimensionMismatch(usize, usize),
    #[error("right-hand side is zero")]
    ZeroRhs,
    #[error(transparent)]
    Quantum(#[from] QuantumError),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HhlConfig {
    pub clock_qubits: u32,
    /// Evolution time of `U = exp(iMt)`.
    pub time: f64,
    /// Ancilla rotation scale; must not exceed the smallest |eigenvalue|.
    pub rotation_scale: f64,
}

/// A padded square system with unit right-hand side.
#[derive(Debug, Clone)]
pub struct LinearSystem {
    pub matrix: LinearOperator,
    pub rhs: Vec<C64>,
    pub rhs_norm: f64,
    original_dim: usize,
    embedded: bool,
}

impl LinearSystem {
    /// Pads to a power of two with identity rows and normalizes `b`.
    pub fn new(m: &LinearOperator, b: &[C64]) -> Result<Self, HhlError> {
        Self::build(m, b, b.len(), false)
    }

    fn build(
        m: &LinearOperator,
        b: &[C64],
        original_dim: usize,
        embedded: bool,
    ) -> Result<Self, HhlError> {
        if m.dim() != b.len() {
            return Err(HhlError::DimensionMismatch(m.dim(), b.len()));
        }
        let n = m.dim();
        let padded = n.next_power_of_two();
        let matrix = if padded == n {
            m.clone()
        } else {
            LinearOperator::from_fn(padded, |i, j| match (i < n, j < n) {
                (true, true) => m.get(i, j),
                _ if i == j => C64::new(1.0, 0.0),
                _ => C64::new(0.0, 0.0),
            })
        };
        let rhs_norm = crate::qcore::norm(b);
        if rhs_norm == 0.0 {
            return Err(HhlError::ZeroRhs);
        }
        let mut rhs: Vec<C64> = b.iter().map(|x| x / rhs_norm).collect();
        rhs.resize(padded, C64::new(0.0, 0.0));
        Ok(LinearSystem {
            matrix,
            rhs,
            rhs_norm,
            original_dim,
            embedded,
        })
    }

    pub fn is_embedded(&self) -> bool {
        self.embedded
    }

    /// Maps a solution of the padded (and possibly embedded) system back to
    /// the original unknowns.
    pub fn extract(&self, full: &[C64]) -> Vec<C64> {
        let start = if self.embedded { self.original_dim } else { 0 };
        full[start..start + self.original_dim].to_vec()
    }
}

/// `[[0, M], [M†, 0]]` with right-hand side `[b; 0]` for non-Hermitian `M`;
/// Hermitian input passes through.
pub fn hermitian_embed(m: &LinearOperator, b: &[C64]) -> Result<LinearSystem, HhlError> {
    if m.is_hermitian() {
        return LinearSystem::new(m, b);
    }
    let n = m.dim();
    if n != b.len() {
        return Err(HhlError::DimensionMismatch(n, b.len()));
    }
    let big = embed_matrix(m);
    let mut rhs = b.to_vec();
    rhs.resize(2 * n, C64::new(0.0, 0.0));
    LinearSystem::build(&big, &rhs, n, true)
}

pub fn embed_matrix(m: &LinearOperator) -> LinearOperator {
    let n = m.dim();
    LinearOperator::from_fn(2 * n, |i, j| match (i < n, j < n) {
        (true, false) => m.get(i, j - n),
        (false, true) => m.get(j, i - n).conj(),
        _ => C64::new(0.0, 0.0),
    })
}

/// Per-eigencomponent register contents right after the conditioned
/// rotation: `overlap·(amp0 |0⟩ + amp1 |1⟩)` tensored with `|clock⟩|u⟩`.
#[derive(Debug, Clone, PartialEq)]
pub struct EigenComponent {
    pub eigenvalue: f64,
    pub estimate: f64,
    pub clock: i64,
    pub overlap: C64,
    pub amp0: C64,
    pub amp1: C64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HhlOutcome {
    /// Unit solution direction in the original unknowns.
    pub direction: Vec<C64>,
    /// ‖s‖ for the unit right-hand side, restricted to the original unknowns.
    pub norm: f64,
    pub probability: f64,
}

fn window(clock_qubits: u32, signed: bool) -> (f64, f64) {
    let bins = (1u64 << clock_qubits) as f64;
    if signed {
        (-bins / 2.0, bins / 2.0)
    } else {
        (0.0, bins)
    }
}

/// An eigendecomposed Hermitian matrix with fixed clock configuration,
/// reusable across right-hand sides.
#[derive(Debug, Clone)]
pub struct HhlSolver {
    eigenvalues: Vec<f64>,
    eigenvectors: DMatrix<C64>,
    estimates: Vec<f64>,
    clocks: Vec<i64>,
    config: HhlConfig,
}

impl HhlSolver {
    pub fn new(m: &LinearOperator, config: HhlConfig) -> Result<Self, HhlError> {
        let (eigenvalues, eigenvectors) = eigen(m)?;
        Self::from_eigen(eigenvalues, eigenvectors, config)
    }

    /// Solver with a configuration from [`choose_config_with`].
    pub fn auto(m: &LinearOperator, default_clock_qubits: u32) -> Result<Self, HhlError> {
        let (eigenvalues, eigenvectors) = eigen(m)?;
        let config = config_for_spectrum(&eigenvalues, default_clock_qubits);
        Self::from_eigen(eigenvalues, eigenvectors, config)
    }

    fn from_eigen(
        eigenvalues: Vec<f64>,
        eigenvectors: DMatrix<C64>,
        config: HhlConfig,
    ) -> Result<Self, HhlError> {
        if config.clock_qubits == 0 || config.clock_qubits > 62 {
            return Err(HhlError::InvalidConfig(format!(
                "clock qubits {}",
                config.clock_qubits
            )));
        }
        if !(config.time > 0.0 && config.time.is_finite()) {
            return Err(HhlError::InvalidConfig(format!("evolution time {}", config.time)));
        }
        let signed = eigenvalues.iter().any(|&l| l <= 0.0);
        let (lo, hi) = window(config.clock_qubits, signed);
        let bins = (1u64 << config.clock_qubits) as f64;
        let unit = 2.0 * PI / (bins * config.time);
        let mut estimates = Vec::with_capacity(eigenvalues.len());
        let mut clocks = Vec::with_capacity(eigenvalues.len());
        for &l in &eigenvalues {
            let x = l / unit;
            if x < lo - 0.5 || x >= hi - 0.5 {
                return Err(HhlError::OutsideWindow {
                    eigenvalue: l,
                    time: config.time,
                });
            }
            let k = x.round() as i64;
            if k == 0 {
                return Err(HhlError::Unresolved(l));
            }
            clocks.push(k);
            estimates.push(k as f64 * unit);
        }
        let smallest = estimates.iter().map(|e| e.abs()).fold(f64::INFINITY, f64::min);
        if config.rotation_scale.is_nan() || config.rotation_scale <= 0.0 || config.rotation_scale > smallest {
            return Err(HhlError::RotationScale {
                scale: config.rotation_scale,
                smallest,
            });
        }
        Ok(HhlSolver {
            eigenvalues,
            eigenvectors,
            estimates,
            clocks,
            config,
        })
    }

    pub fn config(&self) -> &HhlConfig {
        &self.config
    }

    pub fn dim(&self) -> usize {
        self.eigenvalues.len()
    }

    /// Estimated eigenvalues after clock rounding.
    pub fn estimates(&self) -> &[f64] {
        &self.estimates
    }

    /// Register contents after the conditioned rotation for a unit `b`.
    pub fn registers(&self, b: &[C64]) -> Vec<EigenComponent> {
        let c = self.config.rotation_scale;
        (0..self.dim())
            .map(|j| {
                let overlap = self
                    .eigenvectors
                    .column(j)
                    .iter()
                    .zip(b)
                    .fold(C64::new(0.0, 0.0), |acc, (u, x)| acc + u.conj() * x);
                let ratio = c / self.estimates[j];
                EigenComponent {
                    eigenvalue: self.eigenvalues[j],
                    estimate: self.estimates[j],
                    clock: self.clocks[j],
                    overlap,
                    amp0: overlap * (1.0 - ratio * ratio).sqrt(),
                    amp1: overlap * ratio,
                }
            })
            .collect()
    }

    /// Solution of the padded system for a unit right-hand side; returns the
    /// full post-selected state and the ancilla-1 branch probability.
    pub fn solve_state(&self, b: &[C64]) -> Result<(Vec<C64>, f64), HhlError> {
        let n = self.dim();
        if b.len() != n {
            return Err(HhlError::DimensionMismatch(n, b.len()));
        }
        // Clock uncomputed: Σ_j |u_j⟩ (amp0_j|0⟩ + amp1_j|1⟩).
        let mut amps = vec![C64::new(0.0, 0.0); 2 * n];
        for (j, comp) in self.registers(b).into_iter().enumerate() {
            for (i, u) in self.eigenvectors.column(j).iter().enumerate() {
                amps[2 * i] += comp.amp0 * u;
                amps[2 * i + 1] += comp.amp1 * u;
            }
        }
        let qubits = n.trailing_zeros() as usize;
        let layout = tensor(
            &QuantumState::basis("input", qubits, 0),
            &QuantumState::basis("ancilla", 1, 0),
        );
        let (post, p) = layout.with_amplitudes(amps)?.postselect("ancilla", 1)?;
        Ok((post.amplitudes(), p))
    }

    pub fn solve(&self, sys: &LinearSystem) -> Result<HhlOutcome, HhlError> {
        let (full, p) = self.solve_state(&sys.rhs)?;
        let full_norm = p.sqrt() / self.config.rotation_scale;
        let part = sys.extract(&full);
        let part_norm = crate::qcore::norm(&part);
        if part_norm == 0.0 {
            return Err(HhlError::Quantum(QuantumError::EmptyBranch(0.0)));
        }
        Ok(HhlOutcome {
            direction: part.iter().map(|x| x / part_norm).collect(),
            norm: full_norm * part_norm,
            probability: p,
        })
    }
}

fn eigen(m: &LinearOperator) -> Result<(Vec<f64>, DMatrix<C64>), HhlError> {
    if !m.is_hermitian() {
        return Err(HhlError::NotHermitian(m.hermitian_deviation()));
    }
    if !m.dim().is_power_of_two() {
        return Err(HhlError::Quantum(QuantumError::NotPowerOfTwo(m.dim())));
    }
    let e = m.to_dmatrix().symmetric_eigen();
    Ok((e.eigenvalues.iter().copied().collect(), e.eigenvectors))
}

pub fn solve(sys: &LinearSystem, cfg: &HhlConfig) -> Result<HhlOutcome, HhlError> {
    HhlSolver::new(&sys.matrix, *cfg)?.solve(sys)
}

pub fn choose_config(m: &LinearOperator) -> HhlConfig {
    choose_config_with(m, DEFAULT_CLOCK_QUBITS)
}

/// Picks the smallest clock that resolves a dyadic spectrum exactly, else
/// `default_clock_qubits` with `t` tuned to minimize the worst relative
/// rounding error over the distinct |eigenvalues|.
pub fn choose_config_with(m: &LinearOperator, default_clock_qubits: u32) -> HhlConfig {
    let e = m.to_dmatrix().symmetric_eigen();
    let values: Vec<f64> = e.eigenvalues.iter().copied().collect();
    config_for_spectrum(&values, default_clock_qubits)
}

fn config_for_spectrum(eigenvalues: &[f64], default_clock_qubits: u32) -> HhlConfig {
    let signed = eigenvalues.iter().any(|&l| l <= 0.0);
    let mut mags: Vec<f64> = eigenvalues.iter().map(|l| l.abs()).collect();
    mags.sort_by(|a, b| b.total_cmp(a));
    mags.dedup_by(|a, b| (*a - *b).abs() <= 1e-12 * b.abs().max(1e-300));
    let top = mags.first().copied().unwrap_or(0.0);
    if top == 0.0 {
        return HhlConfig {
            clock_qubits: default_clock_qubits,
            time: PI,
            rotation_scale: 0.0,
        };
    }
    let finish = |nc: u32, k: u64| {
        let bins = (1u64 << nc) as f64;
        let unit = top / k as f64;
        let smallest = mags
            .iter()
            .map(|v| (v / unit).round() * unit)
            .fold(f64::INFINITY, f64::min);
        HhlConfig {
            clock_qubits: nc,
            time: 2.0 * PI / (bins * unit),
            rotation_scale: ROTATION_MARGIN * smallest,
        }
    };
    let max_bin = |nc: u32| if signed { (1u64 << (nc - 1)) - 1 } else { (1u64 << nc) - 1 };
    for nc in 1..=MAX_DYADIC_CLOCK_QUBITS.min(default_clock_qubits.max(1)) {
        for k in 1..=max_bin(nc) {
            let unit = top / k as f64;
            let exact = mags.iter().all(|v| {
                let x = v / unit;
                x.round() >= 1.0 && (x - x.round()).abs() <= DYADIC_TOL
            });
            if exact {
                return finish(nc, k);
            }
        }
    }
    let nc = default_clock_qubits.max(2);
    let hi = max_bin(nc);
    let lo = (hi / 2).max(1);
    let mut best = (f64::INFINITY, hi);
    for k in lo..=hi {
        let unit = top / k as f64;
        let worst = mags.iter().fold(0.0f64, |w, v| {
            let x = v / unit;
            let r = x.round();
            w.max(if r < 1.0 { f64::INFINITY } else { (x - r).abs() / x })
        });
        if worst < best.0 {
            best = (worst, k);
        }
    }
    finish(nc, best.1)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(x: f64) -> C64 {
        C64::new(x, 0.0)
    }

    #[test]
    fn identity_system() {
        let m = LinearOperator::identity(2);
        let b = [c(0.6), c(0.8)];
        let sys = LinearSystem::new(&m, &b).unwrap();
        let cfg = choose_config(&m);
        assert_eq!(cfg.clock_qubits, 1);
        let out = solve(&sys, &cfg).unwrap();
        assert!((out.direction[0] - c(0.6)).norm() < 1e-12);
        assert!((out.norm - 1.0).abs() < 1e-12);
        assert!((out.probability - cfg.rotation_scale.powi(2)).abs() < 1e-12);
    }

    #[test]
    fn two_bit_clock_example() {
        let m = LinearOperator::from_real(&[vec![1.5, 0.5], vec![0.5, 1.5]]);
        let sys = LinearSystem::new(&m, &[c(1.0), c(0.0)]).unwrap();
        let cfg = HhlConfig {
            clock_qubits: 2,
            time: PI / 2.0,
            rotation_scale: 0.9,
        };
        let out = solve(&sys, &cfg).unwrap();
        assert!((out.direction[0].re - 0.9486832980505138).abs() < 1e-6);
        assert!((out.direction[1].re + 0.31622776601683794).abs() < 1e-6);
    }

    #[test]
    fn diagonal_config() {
        let m = LinearOperator::from_real(&[vec![1.0, 0.0], vec![0.0, 2.0]]);
        let cfg = choose_config(&m);
        assert_eq!(cfg.clock_qubits, 2);
        assert!((cfg.time - PI / 2.0).abs() < 1e-12);
    }

    #[test]
    fn embedding_block_structure() {
        let m = LinearOperator::from_real(&[vec![0.0, 1.0], vec![0.0, 0.0]]);
        let sys = hermitian_embed(&m, &[c(1.0), c(0.0)]).unwrap();
        assert!(sys.is_embedded());
        let e = &sys.matrix;
        assert_eq!(e.dim(), 4);
        assert_eq!(e.get(0, 3), c(1.0));
        assert_eq!(e.get(3, 0), c(1.0));
        let nonzero = (0..4)
            .flat_map(|i| (0..4).map(move |j| (i, j)))
            .filter(|&(i, j)| e.get(i, j) != c(0.0))
            .count();
        assert_eq!(nonzero, 2);
        assert!(e.is_hermitian());
    }

    #[test]
    fn window_and_resolution_errors() {
        let m = LinearOperator::from_real(&[vec![1.0, 0.0], vec![0.0, 4.0]]);
        let sys = LinearSystem::new(&m, &[c(1.0), c(0.0)]).unwrap();
        let cfg = HhlConfig {
            clock_qubits: 2,
            time: PI / 2.0,
            rotation_scale: 0.5,
        };
        assert!(matches!(
            solve(&sys, &cfg),
            Err(HhlError::OutsideWindow { eigenvalue, .. }) if eigenvalue == 4.0
        ));
        let tiny = LinearOperator::from_real(&[vec![0.01, 0.0], vec![0.0, 1.0]]);
        let sys = LinearSystem::new(&tiny, &[c(1.0), c(0.0)]).unwrap();
        assert!(matches!(solve(&sys, &cfg), Err(HhlError::Unresolved(_))));
    }
}
