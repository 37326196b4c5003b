//! Reference solutions built from the transform and semi-dual primitives only.

use nalgebra::{DMatrix, DVector};

use crate::eot::{
    coupling_from, ctransform_of_f, ctransform_of_g, marginal_error, Coupling, EotProblem,
    Potentials,
};
use crate::error::{Error, Result};
use crate::objective::ColumnConditionals;

/// Largest `n·m` accepted by [`oracle_solve`].
pub const ORACLE_MAX_ENTRIES: usize = 1_000_000;
/// Required marginal error of the returned coupling.
pub const ORACLE_RESIDUAL: f64 = 1e-12;
const TARGET_RESIDUAL: f64 = 1e-13;
const HANDOFF_RESIDUAL: f64 = 1e-6;
const SK_BUDGET: usize = 20_000;
const NEWTON_BUDGET: usize = 200;

#[derive(Debug, Clone)]
pub struct OracleSolution {
    /// Gauge-normalized, `g = f^{C,ε}`.
    pub potentials: Potentials,
    pub coupling: Coupling,
    pub residual: f64,
}

fn alpha_mean_zero(problem: &EotProblem, f: &mut DVector<f64>) {
    let shift = problem.alpha().integrate(f);
    f.add_scalar_mut(-shift);
}

fn row_residual(problem: &EotProblem, cc: &ColumnConditionals) -> f64 {
    (cc.row_mass() - problem.alpha().weights()).norm()
}

/// High-accuracy solution by alternating transforms followed by damped
/// full-space Newton on the semi-dual.
///
/// The Newton system is `(-∇²Q + γ·11ᵀ) d = ∇Q`, where the rank-one term
/// removes the constant null direction. Steps are halved until the exact
/// increment is positive.
pub fn oracle_solve(problem: &EotProblem) -> Result<OracleSolution> {
    let (n, m) = (problem.n(), problem.m());
    if n.saturating_mul(m) > ORACLE_MAX_ENTRIES {
        return Err(Error::InvalidArgument(format!(
            "oracle limited to n·m <= {ORACLE_MAX_ENTRIES}, got {n}·{m}"
        )));
    }
    let mut f = DVector::zeros(n);
    for it in 0..SK_BUDGET {
        let g = ctransform_of_f(problem, &f);
        f = ctransform_of_g(problem, &g);
        alpha_mean_zero(problem, &mut f);
        if it % 10 == 9 {
            let cc = ColumnConditionals::new(problem, &f);
            if row_residual(problem, &cc) <= HANDOFF_RESIDUAL {
                break;
            }
        }
    }

    for _ in 0..NEWTON_BUDGET {
        let cc = ColumnConditionals::new(problem, &f);
        if row_residual(problem, &cc) <= TARGET_RESIDUAL || n == 1 {
            break;
        }
        let grad = cc.gradient(problem);
        let mut system = -cc.full_hessian(problem);
        let gamma = system.trace() / (n * n) as f64;
        system.add_scalar_mut(gamma);
        let direction = match system.clone().cholesky() {
            Some(chol) => chol.solve(&grad),
            None => match system.lu().solve(&grad) {
                Some(d) => d,
                None => break,
            },
        };
        let mut t = 1.0;
        let mut moved = false;
        while t > 1e-12 {
            let step = &direction * t;
            let (increase, _) = cc.increment(problem, &f, &step);
            if increase > 0.0 {
                f += step;
                alpha_mean_zero(problem, &mut f);
                moved = true;
                break;
            }
            t *= 0.5;
        }
        if !moved {
            break;
        }
    }

    let g = ctransform_of_f(problem, &f);
    let potentials = Potentials::new(f, g)?;
    let coupling = coupling_from(problem, &potentials);
    let residual = marginal_error(problem, &coupling);
    if residual.is_nan() || residual > ORACLE_RESIDUAL {
        return Err(Error::OracleNotConverged { residual });
    }
    Ok(OracleSolution {
        potentials,
        coupling,
        residual,
    })
}

impl OracleSolution {
    pub fn plan(&self) -> &DMatrix<f64> {
        &self.coupling.plan
    }
}
