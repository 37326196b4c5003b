use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

use crate::eot::{ctransform_of_f, ctransform_of_g, EotProblem};
use crate::spectral::{build_operator, SinkhornOperator};

use super::oracle::OracleSolution;

/// Deviations of the transforms from their linearization at the oracle.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearizationReport {
    pub scale: f64,
    pub trials: usize,
    /// `max ‖T(δ) - T(0) + K_ε δ‖∞` over trials.
    pub max_residual: f64,
    /// `max ‖T(δ) - T(0) + K_ε δ‖∞ / (‖δ‖∞² / ε)`.
    pub max_ratio: f64,
    /// `max ‖(T(δ) - T(-δ))/2 + K_ε δ‖∞ / ‖K_ε δ‖∞`: the error of the
    /// first-order term alone, with the even remainder cancelled.
    pub max_linear_relative_error: f64,
}

/// `T(δf, δg) = ((g* + δg)^{C,ε}, (f* + δf)^{C,ε})`, the transform pair that
/// one half-sweep produces from perturbed potentials.
fn transforms(
    problem: &EotProblem,
    op: &SinkhornOperator,
    df: &DVector<f64>,
    dg: &DVector<f64>,
) -> (DVector<f64>, DVector<f64>) {
    let pots = op.potentials();
    (
        ctransform_of_g(problem, &(&pots.g + dg)),
        ctransform_of_f(problem, &(&pots.f + df)),
    )
}

/// `‖T(δ) - T(0) + K_ε δ‖∞` at the potentials the operator was built from.
pub fn linearization_residual(
    problem: &EotProblem,
    op: &SinkhornOperator,
    df: &DVector<f64>,
    dg: &DVector<f64>,
) -> f64 {
    let zero_f = DVector::zeros(df.len());
    let zero_g = DVector::zeros(dg.len());
    let (base_f, base_g) = transforms(problem, op, &zero_f, &zero_g);
    let (tf, tg) = transforms(problem, op, df, dg);
    let (kf, kg) = op.apply_k(df, dg);
    let rf = (tf - base_f + kf).amax();
    let rg = (tg - base_g + kg).amax();
    rf.max(rg)
}

/// Compares the transform pair under random perturbations of size `scale`
/// with its first-order expansion `-K_ε δ`.
///
/// Directions are uniform on `[-1, 1]^{n+m}` from a ChaCha20 stream seeded by
/// `seed`, so equal seeds reuse the same directions at every scale.
pub fn linearization_check(
    problem: &EotProblem,
    oracle: &OracleSolution,
    scale: f64,
    trials: usize,
    seed: u64,
) -> LinearizationReport {
    let op = build_operator(problem, &oracle.potentials);
    let (n, m) = (problem.n(), problem.m());
    let eps = problem.epsilon();
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let zero_f = DVector::zeros(n);
    let zero_g = DVector::zeros(m);
    let (base_f, base_g) = transforms(problem, &op, &zero_f, &zero_g);

    let mut report = LinearizationReport {
        scale,
        trials,
        max_residual: 0.0,
        max_ratio: 0.0,
        max_linear_relative_error: 0.0,
    };
    for _ in 0..trials {
        let df = DVector::from_fn(n, |_, _| scale * (2.0 * rng.random::<f64>() - 1.0));
        let dg = DVector::from_fn(m, |_, _| scale * (2.0 * rng.random::<f64>() - 1.0));
        let size = df.amax().max(dg.amax());
        let (kf, kg) = op.apply_k(&df, &dg);
        let (tf, tg) = transforms(problem, &op, &df, &dg);
        let residual = (&tf - &base_f + &kf)
            .amax()
            .max((&tg - &base_g + &kg).amax());

        let (uf, ug) = transforms(problem, &op, &(-&df), &(-&dg));
        let odd_f = (&tf - &uf) * 0.5;
        let odd_g = (&tg - &ug) * 0.5;
        let linear_err = (odd_f + &kf).amax().max((odd_g + &kg).amax());
        let linear_size = kf.amax().max(kg.amax());

        report.max_residual = report.max_residual.max(residual);
        if size > 0.0 {
            report.max_ratio = report.max_ratio.max(residual / (size * size / eps));
        }
        if linear_size > 0.0 {
            report.max_linear_relative_error = report
                .max_linear_relative_error
                .max(linear_err / linear_size);
        }
    }
    report
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::{oracle_solve, Instance};

    #[test]
    fn zero_perturbation_has_zero_residual() {
        let problem = Instance::gauss2d(6, 8).problem(1, 0.5).unwrap();
        let sol = oracle_solve(&problem).unwrap();
        let report = linearization_check(&problem, &sol, 0.0, 3, 0);
        assert!(report.max_residual <= 1e-13);
    }

    #[test]
    fn gauge_direction_is_exact() {
        let problem = Instance::gauss2d(6, 8).problem(1, 0.5).unwrap();
        let sol = oracle_solve(&problem).unwrap();
        let op = build_operator(&problem, &sol.potentials);
        let c = 0.37;
        let df = DVector::from_element(6, c);
        let dg = DVector::from_element(8, -c);
        assert!(linearization_residual(&problem, &op, &df, &dg) <= 1e-12);
    }

    #[test]
    fn halving_scale_quarters_residual() {
        let problem = Instance::gauss2d(10, 10).problem(3, 1.0).unwrap();
        let sol = oracle_solve(&problem).unwrap();
        let coarse = linearization_check(&problem, &sol, 1e-3, 5, 4);
        let fine = linearization_check(&problem, &sol, 5e-4, 5, 4);
        let factor = coarse.max_residual / fine.max_residual;
        assert!((3.0..=5.0).contains(&factor), "{factor}");
    }
}
