use nalgebra::DMatrix;
use num_complex::Complex64;
use proptest::prelude::*;
use qdae::qcore::{evolve, evolve_state, tensor, LinearOperator, QuantumState};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_hermitian(rng: &mut ChaCha8Rng, n: usize) -> LinearOperator {
    let mut m = DMatrix::<Complex64>::zeros(n, n);
    for i in 0..n {
        m[(i, i)] = Complex64::new(rng.gen_range(-1.0..1.0), 0.0);
        for j in i + 1..n {
            let z = Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
            m[(i, j)] = z;
            m[(j, i)] = z.conj();
        }
    }
    LinearOperator::from_dmatrix(&m)
}

/// exp(-iHt) through the eigendecomposition, independent of the Taylor path.
fn exact_propagator(h: &LinearOperator, t: f64) -> LinearOperator {
    let eig = h.to_dmatrix().symmetric_eigen();
    let phases = DMatrix::from_diagonal(&eig.eigenvalues.map(|l| Complex64::new(0.0, -l * t).exp()));
    let u = &eig.eigenvectors * phases * eig.eigenvectors.adjoint();
    LinearOperator::from_dmatrix(&u)
}

#[test]
fn taylor_propagator_matches_eigendecomposition() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let h = random_hermitian(&mut rng, 4);
    let u = evolve(&h, 0.1, 20).unwrap();
    assert!(u.max_abs_diff(&exact_propagator(&h, 0.1)) < 1e-10);
}

#[test]
fn matrix_free_evolution_matches_dense_propagator() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let h = random_hermitian(&mut rng, 8);
    let psi = QuantumState::basis("q", 3, 5);
    let dense = h_apply(&evolve(&h, 0.3, 6).unwrap(), &psi);
    let free = evolve_state(&h, 0.3, 6, &psi).unwrap().amplitudes();
    for (a, b) in dense.iter().zip(&free) {
        assert!((a - b).norm() < 1e-14);
    }
}

fn h_apply(u: &LinearOperator, s: &QuantumState) -> Vec<Complex64> {
    u.apply_state(s).unwrap().amplitudes()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn postselection_probabilities_sum_to_one(seed in any::<u64>(), width in 1usize..3) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let dim = 1usize << (width + 2);
        let raw: Vec<Complex64> = (0..dim)
            .map(|_| Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
            .collect();
        let n = raw.iter().map(|a| a.norm_sqr()).sum::<f64>().sqrt();
        let amps: Vec<Complex64> = raw.iter().map(|a| a / n).collect();
        let layout = tensor(
            &QuantumState::basis("a", 2, 0),
            &QuantumState::basis("b", width, 0),
        );
        let s = layout.with_amplitudes(amps).unwrap();
        let total: f64 = (0..1usize << width)
            .map(|k| s.postselect("b", k).map(|(_, p)| p).unwrap_or(0.0))
            .sum();
        prop_assert!((total - 1.0).abs() < 1e-12);
        let (post, _) = s.postselect("a", 1).unwrap();
        prop_assert!((post.norm() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn full_order_evolution_preserves_norm(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let h = random_hermitian(&mut rng, 4);
        let psi = QuantumState::basis("q", 2, (seed % 4) as usize);
        let out = evolve_state(&h, 0.05, 20, &psi).unwrap();
        prop_assert!((out.norm() - 1.0).abs() < 1e-12);
    }
}
