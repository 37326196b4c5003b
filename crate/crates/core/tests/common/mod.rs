#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sknr::{build_operator, CostMatrix, DiscreteMeasure, EotProblem, Potentials, SpectralBasis};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_measure(rng: &mut ChaCha8Rng, n: usize) -> DiscreteMeasure {
    DiscreteMeasure::normalized((0..n).map(|_| 0.2 + rng.random::<f64>()).collect()).unwrap()
}

/// Costs uniform on `[0, scale]`, weights bounded away from zero.
pub fn random_problem(seed: u64, n: usize, m: usize, epsilon: f64, scale: f64) -> EotProblem {
    let mut r = rng(seed);
    let cost = DMatrix::from_fn(n, m, |_, _| scale * r.random::<f64>());
    let alpha = random_measure(&mut r, n);
    let beta = random_measure(&mut r, m);
    EotProblem::new(CostMatrix::new(cost).unwrap(), alpha, beta, epsilon).unwrap()
}

pub fn random_vector(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> DVector<f64> {
    DVector::from_fn(n, |_, _| scale * (2.0 * rng.random::<f64>() - 1.0))
}

pub fn osc(v: &DVector<f64>) -> f64 {
    v.max() - v.min()
}

/// Singular values of `R̃` in decreasing order with the matching left vectors.
pub fn dense_svd(problem: &EotProblem, pots: &Potentials) -> (Vec<f64>, DMatrix<f64>) {
    let rt = build_operator(problem, pots).symmetrized_block();
    let svd = rt.svd(true, false);
    let u = svd.u.unwrap();
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|a, b| svd.singular_values[*b].total_cmp(&svd.singular_values[*a]));
    let sigma = order.iter().map(|&k| svd.singular_values[k]).collect();
    let vectors = DMatrix::from_fn(u.nrows(), order.len(), |i, c| u[(i, order[c])]);
    (sigma, vectors)
}

/// Exact low-frequency basis: the `ell` left singular vectors of `R̃` after the
/// Perron one, from a dense SVD.
pub fn exact_basis(problem: &EotProblem, pots: &Potentials, ell: usize) -> SpectralBasis {
    let (sigma, u) = dense_svd(problem, pots);
    let sqrt_alpha = problem.alpha().weights().map(f64::sqrt);
    let mut w = u.columns(1, ell).into_owned();
    // Re-orthonormalize against √α to remove the residual of an inexact optimum.
    for mut col in w.column_iter_mut() {
        let c = sqrt_alpha.dot(&col);
        col.axpy(-c, &sqrt_alpha, 1.0);
    }
    let w = w.qr().q();
    SpectralBasis::from_symmetric(
        w,
        problem.alpha(),
        sigma[1..=ell].to_vec(),
        problem.epsilon(),
    )
    .unwrap()
}
