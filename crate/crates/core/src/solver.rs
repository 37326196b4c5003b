//! Vanilla Sinkhorn–Knopp, the SK-NR(ℓ) iteration and ε-annealing.
//!
//! One iteration is: `g ← f^{C,ε}`, `f ← g^{C,ε}`, marginal check, then
//! (when a basis is supplied) a Newton–Raphson step on `Q^semi` restricted to
//! the basis span, kept only if it strictly increases `Q^semi`.

use std::str::FromStr;
use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::eot::{
    coupling_from, ctransform_of_f, ctransform_of_g, marginal_errors,
    marginal_errors_from_transforms, Coupling, EotProblem, MarginalErrors, Potentials,
};
use crate::error::{Error, Result};
use crate::objective::ColumnConditionals;
use crate::spectral::{
    build_operator, default_max_power_iters, top_modes, SpectralBasis, DEFAULT_EIGEN_TOL,
};

pub const DEFAULT_TOL_OMEGA: f64 = 1e-9;
pub const DEFAULT_MAX_ITER: usize = 100_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverConfig {
    /// Stop once `‖π1 - α‖₂ + ‖πᵀ1 - β‖₂ < tol_omega`.
    pub tol_omega: f64,
    pub max_iter: usize,
    /// Number of Newton directions; 0 is plain Sinkhorn.
    pub ell: usize,
    pub trace_enabled: bool,
    /// Re-centre `f` to `Σ α_i f_i = 0` after every sweep.
    pub normalize_gauge: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            tol_omega: DEFAULT_TOL_OMEGA,
            max_iter: DEFAULT_MAX_ITER,
            ell: 0,
            trace_enabled: true,
            normalize_gauge: true,
        }
    }
}

impl SolverConfig {
    pub fn with_ell(mut self, ell: usize) -> Self {
        self.ell = ell;
        self
    }

    pub fn with_tol(mut self, tol_omega: f64) -> Self {
        self.tol_omega = tol_omega;
        self
    }

    pub fn with_max_iter(mut self, max_iter: usize) -> Self {
        self.max_iter = max_iter;
        self
    }

    pub fn newton_enabled(&self) -> bool {
        self.ell > 0
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tol_omega.is_finite() && self.tol_omega > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "tol_omega must be > 0, got {}",
                self.tol_omega
            )));
        }
        if self.max_iter == 0 {
            return Err(Error::InvalidArgument("max_iter must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IterationRecord {
    pub index: usize,
    /// Euclidean marginal error (the stopping quantity).
    pub marginal_error: f64,
    pub marginal_error_inf: f64,
    /// `‖πᵀ1 - β‖₂` alone.
    pub column_error: f64,
    pub semi_dual_value: f64,
    pub newton_attempted: bool,
    pub newton_accepted: bool,
    /// Consecutive rejected Newton steps up to and including this iteration.
    pub rejection_streak: usize,
    pub wall_time: Duration,
}

#[derive(Debug, Clone)]
pub struct SolveResult {
    pub potentials: Potentials,
    pub coupling: Coupling,
    pub converged: bool,
    pub iterations: usize,
    pub marginal_error: f64,
    pub trace: Vec<IterationRecord>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WarmMode {
    None,
    Potentials,
    Spectral,
}

impl FromStr for WarmMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(Self::None),
            "potentials" => Ok(Self::Potentials),
            "spectral" => Ok(Self::Spectral),
            other => Err(Error::InvalidArgument(format!(
                "unknown warm mode '{other}' (expected none, potentials or spectral)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnnealSchedule {
    pub epsilons: Vec<f64>,
    pub warm_mode: WarmMode,
    /// Rebuild the basis from every stage's solution instead of reusing the first one.
    pub refresh_basis: bool,
    pub eigen_tol: f64,
    pub max_power_iters: Option<usize>,
}

impl AnnealSchedule {
    pub fn new(epsilons: Vec<f64>, warm_mode: WarmMode) -> Result<Self> {
        let schedule = Self {
            epsilons,
            warm_mode,
            refresh_basis: false,
            eigen_tol: DEFAULT_EIGEN_TOL,
            max_power_iters: None,
        };
        schedule.validate()?;
        Ok(schedule)
    }

    pub fn with_refresh(mut self, refresh_basis: bool) -> Self {
        self.refresh_basis = refresh_basis;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.epsilons.is_empty() {
            return Err(Error::InvalidArgument("empty epsilon schedule".into()));
        }
        if self.epsilons.iter().any(|e| !(e.is_finite() && *e > 0.0)) {
            return Err(Error::InvalidArgument(
                "schedule epsilons must be positive".into(),
            ));
        }
        if self.epsilons.windows(2).any(|w| w[1] >= w[0]) {
            return Err(Error::InvalidArgument(
                "schedule epsilons must be strictly decreasing".into(),
            ));
        }
        Ok(())
    }
}

/// One Sinkhorn sweep in the order `g ← f^{C,ε}`, then `f ← g^{C,ε}`.
pub fn sk_sweep(problem: &EotProblem, pots: &Potentials) -> Potentials {
    let g = ctransform_of_f(problem, &pots.f);
    let f = ctransform_of_g(problem, &g);
    Potentials { f, g }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum NewtonOutcome {
    Accepted,
    /// The candidate did not strictly increase `Q^semi`.
    NoIncrease,
    /// The restricted Hessian could not be factorized.
    Singular,
}

#[derive(Debug, Clone)]
pub struct NewtonStep {
    /// The candidate when accepted, otherwise the input `f`.
    pub f: DVector<f64>,
    pub accepted: bool,
    pub outcome: NewtonOutcome,
    /// `Q^semi(f') - Q^semi(f)` for the candidate (NaN when singular).
    pub increment: f64,
    /// `f^{C,ε}` of the returned `f`.
    pub transform: DVector<f64>,
}

/// Newton–Raphson step on `Q^semi` restricted to the span of `basis`.
pub fn newton_step(
    problem: &EotProblem,
    f: &DVector<f64>,
    basis: &SpectralBasis,
) -> Result<NewtonStep> {
    if basis.is_empty() {
        return Err(Error::InvalidArgument(
            "Newton step needs a nonempty basis".into(),
        ));
    }
    if basis.dimension() != problem.n() {
        return Err(Error::DimensionMismatch {
            what: "basis dimension",
            expected: problem.n(),
            got: basis.dimension(),
        });
    }
    let conditionals = ColumnConditionals::new(problem, f);
    newton_from(problem, f, conditionals, basis.vectors())
}

fn newton_from(
    problem: &EotProblem,
    f: &DVector<f64>,
    conditionals: ColumnConditionals,
    vectors: &DMatrix<f64>,
) -> Result<NewtonStep> {
    let derivatives = conditionals.restricted(problem, vectors)?;
    let rejected = |outcome, increment, cc: ColumnConditionals| NewtonStep {
        f: f.clone(),
        accepted: false,
        outcome,
        increment,
        transform: cc.into_transform(),
    };
    // -∇²_V Q is positive definite away from the gauge direction.
    let Some(chol) = (-derivatives.hess).cholesky() else {
        return Ok(rejected(NewtonOutcome::Singular, f64::NAN, conditionals));
    };
    let coords = chol.solve(&derivatives.grad);
    let delta = vectors * coords;
    let (increment, transform) = conditionals.increment(problem, f, &delta);
    if increment > 0.0 && delta.iter().all(|d| d.is_finite()) {
        Ok(NewtonStep {
            f: f + delta,
            accepted: true,
            outcome: NewtonOutcome::Accepted,
            increment,
            transform,
        })
    } else {
        Ok(rejected(NewtonOutcome::NoIncrease, increment, conditionals))
    }
}

pub fn solve(
    problem: &EotProblem,
    config: &SolverConfig,
    basis: Option<&SpectralBasis>,
    init: Option<&Potentials>,
) -> Result<SolveResult> {
    solve_observed(problem, config, basis, init, |_, _| {})
}

/// [`solve`] with a callback receiving `(k, f_k)` after every completed iteration,
/// including the one at which convergence is detected.
pub fn solve_observed<F>(
    problem: &EotProblem,
    config: &SolverConfig,
    basis: Option<&SpectralBasis>,
    init: Option<&Potentials>,
    mut observer: F,
) -> Result<SolveResult>
where
    F: FnMut(usize, &DVector<f64>),
{
    config.validate()?;
    let vectors = match (config.ell, basis) {
        (0, _) => None,
        (ell, Some(b)) => {
            if b.dimension() != problem.n() {
                return Err(Error::DimensionMismatch {
                    what: "basis dimension",
                    expected: problem.n(),
                    got: b.dimension(),
                });
            }
            if b.len() < ell {
                return Err(Error::InvalidArgument(format!(
                    "ell = {ell} but the basis has {} vectors",
                    b.len()
                )));
            }
            Some(b.vectors().columns(0, ell).into_owned())
        }
        (ell, None) => {
            return Err(Error::InvalidArgument(format!(
                "ell = {ell} requires a basis"
            )));
        }
    };
    let mut f = match init {
        Some(p) => {
            if p.f.len() != problem.n() {
                return Err(Error::DimensionMismatch {
                    what: "initial f length",
                    expected: problem.n(),
                    got: p.f.len(),
                });
            }
            p.f.clone()
        }
        None => DVector::zeros(problem.n()),
    };

    let mut trace = Vec::new();
    // f^{C,ε} of the current f, when already known.
    let mut transform: Option<DVector<f64>> = None;
    let mut streak = 0;
    let mut iterations = 0;

    for k in 1..=config.max_iter {
        let start = Instant::now();
        iterations = k;
        let g = transform
            .take()
            .unwrap_or_else(|| ctransform_of_f(problem, &f));
        let f_new = ctransform_of_g(problem, &g);
        let mut pots = Potentials { f: f_new, g };
        if config.normalize_gauge {
            pots.normalize_gauge(problem.alpha());
        }

        let conditionals = vectors
            .as_ref()
            .map(|_| ColumnConditionals::new(problem, &pots.f));
        let g_of_f = match &conditionals {
            Some(cc) => cc.transform().clone(),
            None => ctransform_of_f(problem, &pots.f),
        };
        // f was just set to g^{C,ε}, so the row identity is evaluated against itself.
        let errors = marginal_errors_from_transforms(problem, &pots, &pots.f, &g_of_f);
        let mut value = problem.alpha().integrate(&pots.f) + problem.beta().integrate(&g_of_f);

        if errors.total() < config.tol_omega {
            if config.trace_enabled {
                trace.push(record(k, &errors, value, false, false, streak, start));
            }
            observer(k, &pots.f);
            let coupling = coupling_from(problem, &pots);
            let marginal_error = marginal_errors(problem, &coupling).total();
            return Ok(SolveResult {
                potentials: pots,
                coupling,
                converged: true,
                iterations: k,
                marginal_error,
                trace,
            });
        }

        let (mut attempted, mut accepted) = (false, false);
        f = pots.f;
        match (conditionals, &vectors) {
            (Some(cc), Some(v)) => {
                attempted = true;
                let step = newton_from(problem, &f, cc, v)?;
                accepted = step.accepted;
                if accepted {
                    streak = 0;
                    value = problem.alpha().integrate(&step.f)
                        + problem.beta().integrate(&step.transform);
                } else {
                    streak += 1;
                }
                f = step.f;
                transform = Some(step.transform);
            }
            _ => transform = Some(g_of_f),
        }
        if config.trace_enabled {
            trace.push(record(
                k, &errors, value, attempted, accepted, streak, start,
            ));
        }
        observer(k, &f);
    }

    let g = transform.unwrap_or_else(|| ctransform_of_f(problem, &f));
    let pots = Potentials { f, g };
    let coupling = coupling_from(problem, &pots);
    let marginal_error = marginal_errors(problem, &coupling).total();
    Ok(SolveResult {
        potentials: pots,
        coupling,
        converged: false,
        iterations,
        marginal_error,
        trace,
    })
}

fn record(
    index: usize,
    errors: &MarginalErrors,
    value: f64,
    attempted: bool,
    accepted: bool,
    streak: usize,
    start: Instant,
) -> IterationRecord {
    IterationRecord {
        index,
        marginal_error: errors.total(),
        marginal_error_inf: errors.total_inf(),
        column_error: errors.col_l2,
        semi_dual_value: value,
        newton_attempted: attempted,
        newton_accepted: accepted,
        rejection_streak: streak,
        wall_time: start.elapsed(),
    }
}

/// Low-frequency basis of the operator anchored at `pots`.
pub fn build_basis(
    problem: &EotProblem,
    pots: &Potentials,
    ell: usize,
    tol: f64,
    max_power_iters: usize,
) -> Result<SpectralBasis> {
    top_modes(&build_operator(problem, pots), ell, tol, max_power_iters)
}

/// Solves a decreasing sequence of regularizations, each warm-started from the previous one.
///
/// Stage 0 is plain Sinkhorn from zero. Later stages start from zero
/// (`none`), from the previous potentials (`potentials`), or from the
/// previous potentials plus an `ℓ`-dimensional basis taken from the operator
/// at a previous solution (`spectral`).
pub fn anneal(
    template: &EotProblem,
    schedule: &AnnealSchedule,
    config: &SolverConfig,
) -> Result<Vec<SolveResult>> {
    schedule.validate()?;
    config.validate()?;
    if schedule.warm_mode == WarmMode::Spectral && config.ell == 0 {
        return Err(Error::InvalidArgument(
            "spectral warm start needs ell > 0".into(),
        ));
    }
    let stage_err = |stage: usize| {
        move |e: Error| Error::Stage {
            stage,
            source: Box::new(e),
        }
    };
    let plain = SolverConfig {
        ell: 0,
        ..config.clone()
    };

    let mut results: Vec<SolveResult> = Vec::with_capacity(schedule.epsilons.len());
    let mut problems = Vec::with_capacity(schedule.epsilons.len());
    let mut basis: Option<SpectralBasis> = None;
    for (stage, &eps) in schedule.epsilons.iter().enumerate() {
        let problem = template.with_epsilon(eps).map_err(stage_err(stage))?;
        let result = if stage == 0 {
            solve(&problem, &plain, None, None)
        } else {
            let prev = &results[stage - 1];
            match schedule.warm_mode {
                WarmMode::None => solve(&problem, &plain, None, None),
                WarmMode::Potentials => solve(&problem, &plain, None, Some(&prev.potentials)),
                WarmMode::Spectral => {
                    if basis.is_none() || schedule.refresh_basis {
                        let iters = schedule
                            .max_power_iters
                            .unwrap_or_else(|| default_max_power_iters(config.ell));
                        basis = Some(
                            build_basis(
                                &problems[stage - 1],
                                &prev.potentials,
                                config.ell,
                                schedule.eigen_tol,
                                iters,
                            )
                            .map_err(stage_err(stage))?,
                        );
                    }
                    solve(&problem, config, basis.as_ref(), Some(&prev.potentials))
                }
            }
        }
        .map_err(stage_err(stage))?;
        results.push(result);
        problems.push(problem);
    }
    Ok(results)
}

/// Geometric-mean ratio of successive errors over the last third of `errors`.
pub fn estimate_contraction(errors: &[f64]) -> Result<f64> {
    let tail = &errors[errors.len() - errors.len() / 3..];
    if tail.len() < 5 {
        return Err(Error::InsufficientData(format!(
            "need at least 5 tail entries, got {}",
            tail.len()
        )));
    }
    if tail.iter().any(|e| !(e.is_finite() && *e > 0.0)) {
        return Err(Error::InsufficientData(
            "errors must be positive and finite".into(),
        ));
    }
    let steps = (tail.len() - 1) as f64;
    Ok(((tail[tail.len() - 1].ln() - tail[0].ln()) / steps).exp())
}
