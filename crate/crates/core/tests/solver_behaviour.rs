mod common;

use nalgebra::DVector;
use proptest::prelude::*;
use sknr::harness::{oracle_solve, Instance};
use sknr::objective::semi_dual_gradient;
use sknr::solver::{build_basis, solve_observed, NewtonOutcome};
use sknr::{
    anneal, build_operator, estimate_contraction, newton_step, solve, top_modes, AnnealSchedule,
    EotProblem, SolveResult, SolverConfig, WarmMode,
};

fn assert_monotone(result: &SolveResult) {
    for w in result.trace.windows(2) {
        assert!(
            w[1].semi_dual_value >= w[0].semi_dual_value - 1e-12,
            "value decreased at iteration {}: {} -> {}",
            w[1].index,
            w[0].semi_dual_value,
            w[1].semi_dual_value
        );
    }
}

fn max_plan_gap(result: &SolveResult, problem: &EotProblem) -> f64 {
    let oracle = oracle_solve(problem).unwrap();
    (&result.coupling.plan - oracle.plan()).amax()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn traces_are_monotone_and_match_the_oracle(
        n in 3usize..12,
        m in 2usize..12,
        seed in any::<u64>(),
        eps in prop_oneof![Just(0.05), Just(0.2), Just(1.0)],
        ell in 0usize..3,
    ) {
        let problem = common::random_problem(seed, n, m, eps, 1.0);
        let config = SolverConfig::default().with_ell(ell).with_max_iter(20_000);
        let basis = (ell > 0).then(|| {
            let coarse = problem.with_epsilon(2.0 * eps).unwrap();
            let warm = solve(&coarse, &SolverConfig::default(), None, None).unwrap();
            build_basis(&coarse, &warm.potentials, ell, 1e-9, 10_000).unwrap()
        });
        let result = solve(&problem, &config, basis.as_ref(), None).unwrap();
        assert_monotone(&result);
        if result.converged {
            prop_assert!(max_plan_gap(&result, &problem) <= 1e-6);
        }
    }
}

#[test]
fn runs_are_deterministic() {
    let problem = Instance::gauss2d(20, 25).problem(4, 0.2).unwrap();
    let basis = build_basis(
        &problem.with_epsilon(0.5).unwrap(),
        &solve(
            &problem.with_epsilon(0.5).unwrap(),
            &SolverConfig::default(),
            None,
            None,
        )
        .unwrap()
        .potentials,
        3,
        1e-9,
        5000,
    )
    .unwrap();
    let config = SolverConfig::default().with_ell(3);
    let a = solve(&problem, &config, Some(&basis), None).unwrap();
    let b = solve(&problem, &config, Some(&basis), None).unwrap();
    assert_eq!(a.potentials, b.potentials);
    assert_eq!(a.coupling.plan, b.coupling.plan);
    let strip = |r: &SolveResult| {
        r.trace
            .iter()
            .map(|t| {
                (
                    t.index,
                    t.marginal_error,
                    t.semi_dual_value,
                    t.newton_accepted,
                )
            })
            .collect::<Vec<_>>()
    };
    assert_eq!(strip(&a), strip(&b));
}

#[test]
fn gauge_normalization_does_not_change_the_trace() {
    let problem = Instance::gauss2d(15, 20).problem(2, 0.3).unwrap();
    let on = SolverConfig::default();
    let off = SolverConfig {
        normalize_gauge: false,
        ..SolverConfig::default()
    };
    let a = solve(&problem, &on, None, None).unwrap();
    let b = solve(&problem, &off, None, None).unwrap();
    assert_eq!(a.iterations, b.iterations);
    for (x, y) in a.trace.iter().zip(&b.trace) {
        assert!((x.marginal_error - y.marginal_error).abs() <= 1e-12 * (1.0 + x.marginal_error));
        assert!(
            (x.semi_dual_value - y.semi_dual_value).abs()
                <= 1e-12 * (1.0 + x.semi_dual_value.abs())
        );
    }
}

#[test]
fn accepted_newton_steps_increase_the_value() {
    let problem = Instance::gauss2d(30, 40).problem(1, 0.1).unwrap();
    let coarse = problem.with_epsilon(0.2).unwrap();
    let warm = solve(&coarse, &SolverConfig::default(), None, None).unwrap();
    let basis = build_basis(&coarse, &warm.potentials, 5, 1e-9, 5000).unwrap();
    let mut f = DVector::zeros(30);
    let mut accepted = 0;
    for _ in 0..50 {
        let g = sknr::ctransform_of_f(&problem, &f);
        f = sknr::ctransform_of_g(&problem, &g);
        let step = newton_step(&problem, &f, &basis).unwrap();
        if step.accepted {
            accepted += 1;
            assert_eq!(step.outcome, NewtonOutcome::Accepted);
            assert!(step.increment > 0.0);
            let before = sknr::semi_dual_value(&problem, &f);
            let after = sknr::semi_dual_value(&problem, &step.f);
            assert!(after >= before - 1e-13);
        }
        f = step.f;
    }
    assert!(accepted > 0);
}

/// Near the optimum one Newton step removes the `V`-component of the gradient
/// while the complementary component moves only at second order.
#[test]
fn newton_step_solves_the_quadratic_model() {
    let problem = common::random_problem(12, 6, 6, 0.3, 1.0);
    let sol = oracle_solve(&problem).unwrap();
    let basis = common::exact_basis(&problem, &sol.potentials, 2);
    let v = basis.vectors().clone();
    let alpha = problem.alpha().weights();
    let mut r = common::rng(5);
    for scale in [1e-3, 1e-4] {
        let delta = common::random_vector(&mut r, 6, scale);
        let f = &sol.potentials.f + &delta;
        let grad = semi_dual_gradient(&problem, &f);
        let step = newton_step(&problem, &f, &basis).unwrap();
        assert!(step.accepted);
        let grad_after = semi_dual_gradient(&problem, &step.f);
        let in_span = |g: &DVector<f64>| v.tr_mul(g);
        let complement = |g: &DVector<f64>| g - alpha.component_mul(&(&v * v.tr_mul(g)));
        assert!(in_span(&grad_after).amax() * 100.0 <= in_span(&grad).amax());
        let moved = (complement(&grad_after) - complement(&grad)).amax();
        let size = delta.amax();
        assert!(moved <= 10.0 * size * size / problem.epsilon(), "{moved}");
    }
}

fn osc_errors(
    problem: &EotProblem,
    fstar: &DVector<f64>,
    config: &SolverConfig,
    basis: Option<&sknr::SpectralBasis>,
) -> (SolveResult, Vec<f64>) {
    let mut errors = Vec::new();
    let result = solve_observed(problem, config, basis, None, |_, f| {
        errors.push(common::osc(&(f - fstar)));
    })
    .unwrap();
    (result, errors)
}

fn window_rate(errors: &[f64]) -> f64 {
    let w: Vec<f64> = errors
        .iter()
        .copied()
        .filter(|e| (1e-9..1e-4).contains(e))
        .collect();
    estimate_contraction(&w).unwrap()
}

#[test]
fn rate_law_with_exact_basis() {
    let problem = Instance::gauss2d(60, 120).problem(2, 0.05).unwrap();
    let sol = oracle_solve(&problem).unwrap();
    let (sigma, _) = common::dense_svd(&problem, &sol.potentials);
    let exact = top_modes(&build_operator(&problem, &sol.potentials), 8, 1e-10, 20_000).unwrap();
    let mut previous = f64::INFINITY;
    for ell in [0usize, 2, 4, 8] {
        let basis = (ell > 0).then(|| exact.truncated(ell).unwrap());
        let config = SolverConfig::default()
            .with_tol(1e-13)
            .with_max_iter(20_000)
            .with_ell(ell);
        let (result, errors) = osc_errors(&problem, &sol.potentials.f, &config, basis.as_ref());
        assert_monotone(&result);
        let rate = window_rate(&errors);
        let expected = sigma[ell + 1].powi(2);
        assert!(
            (rate - expected).abs() <= 0.05,
            "ell {ell}: {rate} vs {expected}"
        );
        assert!(rate < previous);
        previous = rate;
    }
}

#[test]
fn warm_basis_accelerates() {
    let problem = Instance::gauss2d(60, 120).problem(1, 0.05).unwrap();
    let sol = oracle_solve(&problem).unwrap();
    let (sigma, _) = common::dense_svd(&problem, &sol.potentials);
    let coarse = problem.with_epsilon(0.1).unwrap();
    let warm = solve(&coarse, &SolverConfig::default(), None, None).unwrap();
    let basis = build_basis(&coarse, &warm.potentials, 8, 1e-8, 4000).unwrap();
    let plain = solve(&problem, &SolverConfig::default(), None, None).unwrap();
    let accelerated = solve(
        &problem,
        &SolverConfig::default().with_ell(8),
        Some(&basis),
        None,
    )
    .unwrap();
    assert!(plain.converged && accelerated.converged);
    assert!(accelerated.iterations < plain.iterations);
    assert!(accelerated.trace.iter().any(|t| t.newton_accepted));
    let config = SolverConfig::default()
        .with_tol(1e-13)
        .with_max_iter(20_000)
        .with_ell(8);
    let (_, errors) = osc_errors(&problem, &sol.potentials.f, &config, Some(&basis));
    let rate = window_rate(&errors);
    assert!(rate <= sigma[9].powi(2) + 0.05, "{rate}");
    assert!(max_plan_gap(&accelerated, &problem) <= 1e-6);
}

fn median(mut xs: Vec<usize>) -> usize {
    xs.sort_unstable();
    xs[xs.len() / 2]
}

#[test]
fn warm_start_orderings() {
    let schedule = vec![1.0, 0.5, 0.25, 0.125];
    let config = SolverConfig::default().with_ell(8);
    let mut totals = [Vec::new(), Vec::new(), Vec::new()];
    let mut per_stage_cold = vec![Vec::new(); 4];
    let mut per_stage_warm = vec![Vec::new(); 4];
    for seed in 1..=5u64 {
        let template = Instance::gauss2d(100, 200).problem(seed, 1.0).unwrap();
        for (k, mode) in [WarmMode::None, WarmMode::Potentials, WarmMode::Spectral]
            .into_iter()
            .enumerate()
        {
            let s = AnnealSchedule::new(schedule.clone(), mode).unwrap();
            let results = anneal(&template, &s, &config).unwrap();
            assert!(
                results.iter().all(|r| r.converged),
                "seed {seed} mode {mode:?}"
            );
            results.iter().for_each(assert_monotone);
            totals[k].push(results.iter().map(|r| r.iterations).sum::<usize>());
            for (stage, r) in results.iter().enumerate() {
                match mode {
                    WarmMode::None => per_stage_cold[stage].push(r.iterations),
                    WarmMode::Potentials => per_stage_warm[stage].push(r.iterations),
                    WarmMode::Spectral => {}
                }
            }
        }
    }
    let [none, potentials, spectral] = totals.map(median);
    assert!(
        spectral <= potentials && potentials <= none,
        "{spectral} {potentials} {none}"
    );
    assert!(spectral < potentials);
    for stage in 0..4 {
        assert!(median(per_stage_warm[stage].clone()) <= median(per_stage_cold[stage].clone()));
    }
}

#[test]
fn single_stage_schedule_equals_solve() {
    let template = Instance::gauss2d(12, 14).problem(3, 1.0).unwrap();
    let direct = solve(&template, &SolverConfig::default(), None, None).unwrap();
    for mode in [WarmMode::None, WarmMode::Potentials, WarmMode::Spectral] {
        let config =
            SolverConfig::default().with_ell(if mode == WarmMode::Spectral { 2 } else { 0 });
        let staged = anneal(
            &template,
            &AnnealSchedule::new(vec![1.0], mode).unwrap(),
            &config,
        )
        .unwrap();
        assert_eq!(staged.len(), 1);
        assert_eq!(staged[0].potentials, direct.potentials);
        assert_eq!(staged[0].coupling.plan, direct.coupling.plan);
    }
}

#[test]
fn refreshed_and_reused_bases_both_converge() {
    let template = Instance::gauss2d(40, 50).problem(6, 1.0).unwrap();
    for refresh in [false, true] {
        let s = AnnealSchedule::new(vec![1.0, 0.5, 0.25], WarmMode::Spectral)
            .unwrap()
            .with_refresh(refresh);
        let results = anneal(&template, &s, &SolverConfig::default().with_ell(4)).unwrap();
        assert!(results.iter().all(|r| r.converged));
    }
}

#[test]
fn stage_errors_carry_the_index() {
    let template = Instance::gauss2d(5, 6).problem(1, 1.0).unwrap();
    // The basis dimension must stay below n = 5, so the first basis build fails.
    let s = AnnealSchedule::new(vec![1.0, 0.5], WarmMode::Spectral).unwrap();
    let err = anneal(&template, &s, &SolverConfig::default().with_ell(5)).unwrap_err();
    assert!(matches!(err, sknr::Error::Stage { stage: 1, .. }), "{err}");
}
