//! Paired runs over shared seeds, emitting long-format rows.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::eot::{EotProblem, Potentials};
use crate::error::{Error, Result};
use crate::solver::{
    anneal, build_basis, estimate_contraction, solve, AnnealSchedule, SolveResult, SolverConfig,
    WarmMode, DEFAULT_MAX_ITER, DEFAULT_TOL_OMEGA,
};
use crate::spectral::{default_max_power_iters, spectrum_report, DEFAULT_EIGEN_TOL};

use super::generators::Instance;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    pub instance: Instance,
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub runs: Vec<RunSpec>,
    #[serde(default)]
    pub spectrum: Option<SpectrumSweep>,
}

/// One solver configuration, repeated for every seed.
///
/// Exactly one of `epsilon` and `schedule` is set. A single-`ε` run with
/// `ell > 0` takes its basis from a plain solve at `basis_from`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSpec {
    pub label: String,
    #[serde(default)]
    pub epsilon: Option<f64>,
    #[serde(default)]
    pub schedule: Option<Vec<f64>>,
    #[serde(default = "default_warm")]
    pub warm: WarmMode,
    #[serde(default)]
    pub ell: usize,
    #[serde(default)]
    pub basis_from: Option<f64>,
    #[serde(default)]
    pub refresh_basis: bool,
    #[serde(default = "default_tol")]
    pub tol_omega: f64,
    #[serde(default = "default_max_iter")]
    pub max_iter: usize,
}

/// Dominant modes of `K_ε` at the solution for each listed `ε`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpectrumSweep {
    pub epsilons: Vec<f64>,
    pub k: usize,
    #[serde(default = "default_sweep_tol")]
    pub tol_omega: f64,
}

fn default_warm() -> WarmMode {
    WarmMode::None
}

fn default_tol() -> f64 {
    DEFAULT_TOL_OMEGA
}

fn default_max_iter() -> usize {
    DEFAULT_MAX_ITER
}

fn default_sweep_tol() -> f64 {
    1e-10
}

impl RunSpec {
    pub fn solve(label: &str, epsilon: f64, ell: usize, basis_from: Option<f64>) -> Self {
        Self {
            label: label.into(),
            epsilon: Some(epsilon),
            schedule: None,
            warm: WarmMode::None,
            ell,
            basis_from,
            refresh_basis: false,
            tol_omega: DEFAULT_TOL_OMEGA,
            max_iter: DEFAULT_MAX_ITER,
        }
    }

    pub fn anneal(label: &str, schedule: Vec<f64>, warm: WarmMode, ell: usize) -> Self {
        Self {
            label: label.into(),
            epsilon: None,
            schedule: Some(schedule),
            warm,
            ell,
            basis_from: None,
            refresh_basis: false,
            tol_omega: DEFAULT_TOL_OMEGA,
            max_iter: DEFAULT_MAX_ITER,
        }
    }

    fn config(&self) -> SolverConfig {
        SolverConfig::default()
            .with_tol(self.tol_omega)
            .with_max_iter(self.max_iter)
            .with_ell(self.ell)
    }

    fn validate(&self) -> Result<()> {
        match (&self.epsilon, &self.schedule) {
            (Some(_), None) => {
                if self.ell > 0 && self.basis_from.is_none() {
                    return Err(Error::InvalidArgument(format!(
                        "run '{}': ell > 0 needs basis_from",
                        self.label
                    )));
                }
            }
            (None, Some(schedule)) => {
                AnnealSchedule::new(schedule.clone(), self.warm)?;
            }
            _ => {
                return Err(Error::InvalidArgument(format!(
                    "run '{}': set exactly one of epsilon and schedule",
                    self.label
                )))
            }
        }
        self.config().validate()
    }

    fn execute(&self, template: &EotProblem) -> Result<Vec<SolveResult>> {
        let config = self.config();
        if let Some(schedule) = &self.schedule {
            let schedule =
                AnnealSchedule::new(schedule.clone(), self.warm)?.with_refresh(self.refresh_basis);
            return anneal(template, &schedule, &config);
        }
        let epsilon = self.epsilon.expect("validated");
        let problem = template.with_epsilon(epsilon)?;
        if self.ell == 0 {
            return Ok(vec![solve(&problem, &config, None, None)?]);
        }
        let source_eps = self.basis_from.expect("validated");
        let source = template.with_epsilon(source_eps)?;
        let plain = SolverConfig {
            ell: 0,
            ..config.clone()
        };
        let warm = solve(&source, &plain, None, None)?;
        let basis = build_basis(
            &source,
            &warm.potentials,
            self.ell,
            DEFAULT_EIGEN_TOL,
            default_max_power_iters(self.ell),
        )?;
        Ok(vec![solve(&problem, &config, Some(&basis), None)?])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TraceRow {
    pub label: String,
    pub seed: u64,
    pub stage: usize,
    pub epsilon: f64,
    pub iter: usize,
    pub marginal_error: f64,
    /// `‖πᵀ1 - β‖₂`.
    pub column_error: f64,
    pub semi_dual_value: f64,
    pub newton_accepted: bool,
    pub time_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SummaryRow {
    pub label: String,
    pub seed: u64,
    pub stage: usize,
    pub epsilon: f64,
    pub iterations: usize,
    pub converged: bool,
    pub marginal_error: f64,
    /// Tail contraction of the marginal error, when the trace is long enough.
    pub tail_rate: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SpectrumRow {
    pub seed: u64,
    pub epsilon: f64,
    /// 1-based, in decreasing `ρ`.
    pub mode: usize,
    pub rho: f64,
    /// `1 - ρ`, an eigenvalue of `Id + K_ε`.
    pub one_minus_rho: f64,
    /// `(1 - ρ)/ε`.
    pub hessian_eig_low: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ExperimentOutput {
    pub trace: Vec<TraceRow>,
    pub summary: Vec<SummaryRow>,
    pub spectrum: Vec<SpectrumRow>,
}

impl ExperimentOutput {
    pub fn is_empty(&self) -> bool {
        self.trace.is_empty() && self.summary.is_empty() && self.spectrum.is_empty()
    }
}

impl ExperimentSpec {
    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(Error::InvalidArgument("no seeds".into()));
        }
        for run in &self.runs {
            run.validate()?;
        }
        if let Some(sweep) = &self.spectrum {
            if sweep.epsilons.iter().any(|e| !(e.is_finite() && *e > 0.0)) {
                return Err(Error::InvalidArgument(
                    "spectrum epsilons must be positive".into(),
                ));
            }
        }
        Ok(())
    }
}

enum Job<'a> {
    Run(&'a RunSpec, u64),
    Sweep(&'a SpectrumSweep, u64),
}

enum JobOutput {
    Run(Vec<TraceRow>, Vec<SummaryRow>),
    Sweep(Vec<SpectrumRow>),
}

fn run_rows(run: &RunSpec, seed: u64, results: &[SolveResult], epsilons: &[f64]) -> JobOutput {
    let mut trace = Vec::new();
    let mut summary = Vec::new();
    for (stage, (result, &epsilon)) in results.iter().zip(epsilons).enumerate() {
        for rec in &result.trace {
            trace.push(TraceRow {
                label: run.label.clone(),
                seed,
                stage,
                epsilon,
                iter: rec.index,
                marginal_error: rec.marginal_error,
                column_error: rec.column_error,
                semi_dual_value: rec.semi_dual_value,
                newton_accepted: rec.newton_accepted,
                time_ms: rec.wall_time.as_secs_f64() * 1e3,
            });
        }
        let errors: Vec<f64> = result.trace.iter().map(|r| r.marginal_error).collect();
        summary.push(SummaryRow {
            label: run.label.clone(),
            seed,
            stage,
            epsilon,
            iterations: result.iterations,
            converged: result.converged,
            marginal_error: result.marginal_error,
            tail_rate: estimate_contraction(&errors).ok(),
        });
    }
    JobOutput::Run(trace, summary)
}

fn execute_job(spec: &ExperimentSpec, job: &Job) -> Result<JobOutput> {
    match *job {
        Job::Run(run, seed) => {
            let epsilons = match (&run.schedule, run.epsilon) {
                (Some(s), _) => s.clone(),
                (None, Some(e)) => vec![e],
                _ => unreachable!("validated"),
            };
            let template = spec.instance.problem(seed, epsilons[0])?;
            let results = run.execute(&template)?;
            Ok(run_rows(run, seed, &results, &epsilons))
        }
        Job::Sweep(sweep, seed) => {
            let mut rows = Vec::new();
            let mut warm: Option<Potentials> = None;
            let config = SolverConfig::default().with_tol(sweep.tol_omega);
            for &epsilon in &sweep.epsilons {
                let problem = spec.instance.problem(seed, epsilon)?;
                let result = solve(&problem, &config, None, warm.as_ref())?;
                let report = spectrum_report(&problem, &result.potentials, sweep.k, false)?;
                for (a, (&rho, &low)) in
                    report.rhos.iter().zip(&report.hessian_eigs_low).enumerate()
                {
                    rows.push(SpectrumRow {
                        seed,
                        epsilon,
                        mode: a + 1,
                        rho,
                        one_minus_rho: 1.0 - rho,
                        hessian_eig_low: low,
                    });
                }
                warm = Some(result.potentials);
            }
            Ok(JobOutput::Sweep(rows))
        }
    }
}

/// Runs every `(run, seed)` pair and the optional spectrum sweep.
///
/// Jobs are distributed over `threads` workers (at least one). Each job is
/// single-threaded and rows come back in spec order, so the output does not
/// depend on `threads` apart from `time_ms`.
pub fn run_experiment(spec: &ExperimentSpec, threads: usize) -> Result<ExperimentOutput> {
    spec.validate()?;
    let mut jobs = Vec::new();
    for run in &spec.runs {
        for &seed in &spec.seeds {
            jobs.push(Job::Run(run, seed));
        }
    }
    if let Some(sweep) = &spec.spectrum {
        for &seed in &spec.seeds {
            jobs.push(Job::Sweep(sweep, seed));
        }
    }

    let slots: Vec<Mutex<Option<Result<JobOutput>>>> =
        jobs.iter().map(|_| Mutex::new(None)).collect();
    let next = AtomicUsize::new(0);
    let workers = threads.max(1).min(jobs.len().max(1));
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let k = next.fetch_add(1, Ordering::Relaxed);
                if k >= jobs.len() {
                    break;
                }
                let out = execute_job(spec, &jobs[k]);
                *slots[k].lock().expect("slot lock") = Some(out);
            });
        }
    });

    let mut output = ExperimentOutput::default();
    for slot in slots {
        match slot.into_inner().expect("slot lock").expect("job ran")? {
            JobOutput::Run(trace, summary) => {
                output.trace.extend(trace);
                output.summary.extend(summary);
            }
            JobOutput::Sweep(rows) => output.spectrum.extend(rows),
        }
    }
    Ok(output)
}
