//! Oracles and generators shared by integration tests.
#![allow(dead_code)]

use nalgebra::DMatrix;
use num_complex::Complex64;
use qdae::qcore::LinearOperator;
use qdae::qsolve::{split_scale, QuadraticSystem};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub fn random_unitary(rng: &mut ChaCha8Rng, n: usize) -> DMatrix<Complex64> {
    let g = DMatrix::from_fn(n, n, |_, _| {
        Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))
    });
    g.qr().q()
}

/// Hermitian matrix with the given spectrum and a random eigenbasis.
pub fn hermitian_with_spectrum(rng: &mut ChaCha8Rng, spectrum: &[f64]) -> LinearOperator {
    let u = random_unitary(rng, spectrum.len());
    let d = DMatrix::from_diagonal(&nalgebra::DVector::from_iterator(
        spectrum.len(),
        spectrum.iter().map(|&l| Complex64::new(l, 0.0)),
    ));
    let m = &u * d * u.adjoint();
    let h = (&m + m.adjoint()) * Complex64::new(0.5, 0.0);
    LinearOperator::from_dmatrix(&h)
}

/// General (non-Hermitian) matrix with singular values in `[lo, hi]`.
pub fn well_conditioned(rng: &mut ChaCha8Rng, n: usize, lo: f64, hi: f64) -> LinearOperator {
    let u = random_unitary(rng, n);
    let v = random_unitary(rng, n);
    let d = DMatrix::from_diagonal(&nalgebra::DVector::from_iterator(
        n,
        (0..n).map(|_| Complex64::new(rng.gen_range(lo..hi), 0.0)),
    ));
    LinearOperator::from_dmatrix(&(u * d * v.adjoint()))
}

pub fn random_vector(rng: &mut ChaCha8Rng, n: usize) -> Vec<Complex64> {
    (0..n)
        .map(|_| Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
        .collect()
}

/// Dense LU solve.
pub fn direct_solve(m: &LinearOperator, b: &[Complex64]) -> Vec<Complex64> {
    let a = m.to_dmatrix();
    let rhs = nalgebra::DVector::from_column_slice(b);
    a.lu().solve(&rhs).expect("invertible").iter().copied().collect()
}

/// Distance between unit directions after removing the global phase.
pub fn direction_error(got: &[Complex64], want: &[Complex64]) -> f64 {
    let nw = want.iter().map(|x| x.norm_sqr()).sum::<f64>().sqrt();
    let ng = got.iter().map(|x| x.norm_sqr()).sum::<f64>().sqrt();
    let inner: Complex64 = got.iter().zip(want).map(|(g, w)| g.conj() * w).sum();
    let phase = if inner.norm() > 0.0 { inner / inner.norm() } else { Complex64::new(1.0, 0.0) };
    got.iter()
        .zip(want)
        .map(|(g, w)| (g / ng * phase - w / nw).norm_sqr())
        .sum::<f64>()
        .sqrt()
}

pub fn random_quadratic(rng: &mut ChaCha8Rng, n: usize) -> QuadraticSystem {
    let mut q = QuadraticSystem::zeros(n, vec![0.0; n]);
    for j in 1..=n {
        for v in 0..=n {
            for k in v..=n {
                q.set(j, v, k, rng.gen_range(-1.0..1.0));
            }
        }
    }
    q
}

pub fn random_unit(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    let v: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
    split_scale(&v).0
}

/// Random Hermitian matrix whose eigenvalues are nonzero integers, so every
/// eigenphase is dyadic for a suitable clock.
pub fn dyadic_system(rng: &mut ChaCha8Rng) -> (LinearOperator, Vec<Complex64>) {
    let n = 1 << rng.gen_range(1..=3);
    let spectrum: Vec<f64> = (0..n)
        .map(|_| {
            let k = rng.gen_range(1..=7) as f64;
            if rng.gen_bool(0.5) { k } else { -k }
        })
        .collect();
    (hermitian_with_spectrum(rng, &spectrum), random_vector(rng, n))
}
