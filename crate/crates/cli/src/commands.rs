use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context};
use serde_json::{Map, Number, Value};
use sha2::{Digest, Sha256};
use sknr::harness::{run_experiment, sq_euclidean_cost, ExperimentSpec, Instance};
use sknr::solver::build_basis;
use sknr::spectral::{default_max_power_iters, DEFAULT_EIGEN_TOL};
use sknr::{
    anneal as run_anneal, solve as run_solve, spectrum_report_with, AnnealSchedule,
    DiscreteMeasure, EotProblem, Error, Potentials, SolveResult, SolverConfig, SpectrumReport,
};

use crate::io::{
    fmt_f64, matrix_csv, read_cost, read_point_cloud, read_weights, vector_csv, write_file, CsvText,
};
use crate::{AnnealArgs, ExperimentArgs, InstanceArgs, SolveArgs, SpectrumArgs, Synthetic};

pub const EXIT_OK: u8 = 0;
pub const EXIT_INPUT: u8 = 1;
pub const EXIT_MAX_ITER: u8 = 2;
pub const EXIT_EIGEN: u8 = 3;

pub struct Failure {
    pub code: u8,
    pub error: anyhow::Error,
}

impl Failure {
    fn input(error: impl Into<anyhow::Error>) -> Self {
        Self {
            code: EXIT_INPUT,
            error: error.into(),
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = if is_eigen_failure(&e) {
            EXIT_EIGEN
        } else {
            EXIT_INPUT
        };
        Self {
            code,
            error: anyhow::Error::new(e),
        }
    }
}

fn is_eigen_failure(e: &Error) -> bool {
    match e {
        Error::SpectralNotConverged { .. } => true,
        Error::Stage { source, .. } => is_eigen_failure(source),
        _ => false,
    }
}

type Outcome = Result<u8, Failure>;

fn load_problem(args: &InstanceArgs, epsilon: f64) -> Result<EotProblem, Failure> {
    if let Some(paths) = &args.points {
        let source = read_point_cloud(&paths[0]).map_err(Failure::input)?;
        let target = read_point_cloud(&paths[1]).map_err(Failure::input)?;
        let cost = sq_euclidean_cost(&source, &target)?;
        return Ok(EotProblem::new(
            cost,
            source.weights().clone(),
            target.weights().clone(),
            epsilon,
        )?);
    }
    if let Some(path) = &args.cost {
        let cost = read_cost(path).map_err(Failure::input)?;
        let alpha = match &args.alpha {
            Some(p) => read_weights(p).map_err(Failure::input)?,
            None => DiscreteMeasure::uniform(cost.nrows())?,
        };
        let beta = match &args.beta {
            Some(p) => read_weights(p).map_err(Failure::input)?,
            None => DiscreteMeasure::uniform(cost.ncols())?,
        };
        return Ok(EotProblem::new(cost, alpha, beta, epsilon)?);
    }
    let family = args.synthetic.expect("clap enforces one source");
    Ok(synthetic_instance(family, args.n, args.m).problem(args.seed, epsilon)?)
}

fn synthetic_instance(family: Synthetic, n: Option<usize>, m: Option<usize>) -> Instance {
    match family {
        Synthetic::Gauss2d => Instance::gauss2d(n.unwrap_or(200), m.unwrap_or(400)),
        Synthetic::Moons => Instance::moons(n.unwrap_or(200)),
        Synthetic::AnnulusSquare => Instance::annulus_square(n.unwrap_or(200), m.unwrap_or(200)),
    }
}

fn summary_line(result: &SolveResult) -> String {
    format!(
        "converged={} iters={} marginal_error={}",
        result.converged,
        result.iterations,
        fmt_f64(result.marginal_error)
    )
}

fn write_solution(dir: &Path, result: &SolveResult) -> anyhow::Result<()> {
    write_file(&dir.join("f.csv"), &vector_csv(&result.potentials.f))?;
    write_file(&dir.join("g.csv"), &vector_csv(&result.potentials.g))?;
    write_file(
        &dir.join("coupling.csv"),
        &matrix_csv(&result.coupling.plan),
    )
}

fn solve_trace(result: &SolveResult) -> String {
    let mut csv = CsvText::new("iter,marginal_error,semi_dual_value,newton_accepted,time_ms");
    for rec in &result.trace {
        csv.row(&[
            rec.index.to_string(),
            fmt_f64(rec.marginal_error),
            fmt_f64(rec.semi_dual_value),
            rec.newton_accepted.to_string(),
            fmt_f64(rec.wall_time.as_secs_f64() * 1e3),
        ]);
    }
    csv.into_string()
}

pub fn solve(args: &SolveArgs) -> Outcome {
    let problem = load_problem(&args.instance, args.epsilon)?;
    let config = SolverConfig::default()
        .with_tol(args.tol)
        .with_max_iter(args.max_iter)
        .with_ell(args.ell);
    config.validate()?;
    let result = if args.ell == 0 {
        run_solve(&problem, &config, None, None)?
    } else {
        let source_eps = args
            .basis_from
            .ok_or_else(|| Failure::input(anyhow!("--ell > 0 requires --basis-from")))?;
        let source = problem.with_epsilon(source_eps)?;
        let plain = SolverConfig {
            ell: 0,
            ..config.clone()
        };
        let warm = run_solve(&source, &plain, None, None)?;
        let basis = build_basis(
            &source,
            &warm.potentials,
            args.ell,
            DEFAULT_EIGEN_TOL,
            default_max_power_iters(args.ell),
        )?;
        run_solve(&problem, &config, Some(&basis), None)?
    };
    if let Some(dir) = &args.out {
        write_solution(dir, &result).map_err(Failure::input)?;
        write_file(&dir.join("trace.csv"), &solve_trace(&result)).map_err(Failure::input)?;
    }
    println!("{}", summary_line(&result));
    Ok(if result.converged {
        EXIT_OK
    } else {
        EXIT_MAX_ITER
    })
}

fn json_number(x: f64) -> Value {
    match fmt_f64(x).parse::<Number>() {
        Ok(n) if x.is_finite() => Value::Number(n),
        _ => Value::Null,
    }
}

fn json_array(xs: &[f64]) -> Value {
    Value::Array(xs.iter().map(|x| json_number(*x)).collect())
}

/// `{"epsilon", "k", "rho", "hessian_eigs_low", "vectors_f"?, "vectors_g"?}`.
pub fn spectrum_json(report: &SpectrumReport) -> String {
    let mut obj = Map::new();
    obj.insert("epsilon".into(), json_number(report.epsilon));
    obj.insert("k".into(), Value::from(report.k()));
    obj.insert("rho".into(), json_array(&report.rhos));
    obj.insert(
        "hessian_eigs_low".into(),
        json_array(&report.hessian_eigs_low),
    );
    if let Some(vs) = &report.vectors_f {
        obj.insert(
            "vectors_f".into(),
            Value::Array(vs.iter().map(|v| json_array(v)).collect()),
        );
    }
    if let Some(vs) = &report.vectors_g {
        obj.insert(
            "vectors_g".into(),
            Value::Array(vs.iter().map(|v| json_array(v)).collect()),
        );
    }
    let mut text = serde_json::to_string_pretty(&Value::Object(obj)).expect("serializable");
    text.push('\n');
    text
}

pub fn spectrum(args: &SpectrumArgs) -> Outcome {
    if args.epsilons.is_empty() {
        return Err(Failure::input(anyhow!("--epsilons is empty")));
    }
    let config = SolverConfig::default().with_tol(args.tol);
    let mut warm: Option<Potentials> = None;
    for (index, &epsilon) in args.epsilons.iter().enumerate() {
        let problem = load_problem(&args.instance, epsilon)?;
        let result = run_solve(&problem, &config, None, warm.as_ref())?;
        if !result.converged {
            eprintln!(
                "warning: epsilon {}: solver stopped at marginal error {}",
                fmt_f64(epsilon),
                fmt_f64(result.marginal_error)
            );
        }
        let power_iters = args
            .max_power_iters
            .unwrap_or_else(|| default_max_power_iters(args.k));
        let report = spectrum_report_with(
            &problem,
            &result.potentials,
            args.k,
            args.vectors,
            args.eigen_tol,
            power_iters,
        )
        .map_err(Failure::from)
        .map_err(|f| Failure {
            code: f.code,
            error: f.error.context(format!("epsilon {}", fmt_f64(epsilon))),
        })?;
        let path = args.out.join(format!("spectrum_{index:03}.json"));
        write_file(&path, &spectrum_json(&report)).map_err(Failure::input)?;
        println!(
            "epsilon={} rho1={}",
            fmt_f64(epsilon),
            report.rhos.first().map_or("none".into(), |r| fmt_f64(*r))
        );
        warm = Some(result.potentials);
    }
    Ok(EXIT_OK)
}

pub fn anneal(args: &AnnealArgs) -> Outcome {
    let first = *args
        .schedule
        .first()
        .ok_or_else(|| Failure::input(anyhow!("--schedule is empty")))?;
    let template = load_problem(&args.instance, first)?;
    let schedule =
        AnnealSchedule::new(args.schedule.clone(), args.warm)?.with_refresh(args.refresh_basis);
    let config = SolverConfig::default()
        .with_tol(args.tol)
        .with_max_iter(args.max_iter)
        .with_ell(args.ell);
    let results = run_anneal(&template, &schedule, &config)?;

    let mut trace =
        CsvText::new("stage,epsilon,iter,marginal_error,semi_dual_value,newton_accepted,time_ms");
    for (stage, (result, eps)) in results.iter().zip(&args.schedule).enumerate() {
        for rec in &result.trace {
            trace.row(&[
                stage.to_string(),
                fmt_f64(*eps),
                rec.index.to_string(),
                fmt_f64(rec.marginal_error),
                fmt_f64(rec.semi_dual_value),
                rec.newton_accepted.to_string(),
                fmt_f64(rec.wall_time.as_secs_f64() * 1e3),
            ]);
        }
        println!(
            "stage={stage} epsilon={} {}",
            fmt_f64(*eps),
            summary_line(result)
        );
    }
    if let Some(dir) = &args.out {
        for (stage, result) in results.iter().enumerate() {
            write_solution(&dir.join(format!("stage{stage}")), result).map_err(Failure::input)?;
        }
        write_file(&dir.join("trace.csv"), &trace.into_string()).map_err(Failure::input)?;
    }
    let total: usize = results.iter().map(|r| r.iterations).sum();
    println!("total_iters={total}");
    Ok(if results.iter().all(|r| r.converged) {
        EXIT_OK
    } else {
        EXIT_MAX_ITER
    })
}

fn threads_from_env() -> Result<usize, Failure> {
    match std::env::var("SKNR_THREADS") {
        Err(_) => Ok(1),
        Ok(v) => v
            .trim()
            .parse::<usize>()
            .ok()
            .filter(|t| *t >= 1)
            .ok_or_else(|| {
                Failure::input(anyhow!(
                    "SKNR_THREADS must be a positive integer, got '{v}'"
                ))
            }),
    }
}

fn opt_f64(x: Option<f64>) -> String {
    x.map(fmt_f64).unwrap_or_default()
}

pub fn experiment(args: &ExperimentArgs) -> Outcome {
    let bytes = fs::read(&args.config)
        .with_context(|| format!("cannot read {}", args.config.display()))
        .map_err(Failure::input)?;
    let spec: ExperimentSpec = serde_json::from_slice(&bytes)
        .map_err(|e| Failure::input(anyhow!("{}: {e}", args.config.display())))?;
    if spec.seeds.is_empty() {
        return Err(Failure::input(anyhow!("no seeds")));
    }
    let hash = hex::encode(Sha256::digest(&bytes));
    let out: PathBuf = args
        .out
        .clone()
        .unwrap_or_else(|| PathBuf::from("sknr-runs").join(&hash[..16]));
    let threads = threads_from_env()?;
    let output = run_experiment(&spec, threads)?;

    let mut trace = CsvText::new(
        "label,seed,stage,epsilon,iter,marginal_error,column_error,semi_dual_value,newton_accepted",
    );
    let mut timing = CsvText::new("label,seed,stage,iter,time_ms");
    for r in &output.trace {
        trace.row(&[
            r.label.clone(),
            r.seed.to_string(),
            r.stage.to_string(),
            fmt_f64(r.epsilon),
            r.iter.to_string(),
            fmt_f64(r.marginal_error),
            fmt_f64(r.column_error),
            fmt_f64(r.semi_dual_value),
            r.newton_accepted.to_string(),
        ]);
        timing.row(&[
            r.label.clone(),
            r.seed.to_string(),
            r.stage.to_string(),
            r.iter.to_string(),
            fmt_f64(r.time_ms),
        ]);
    }
    let mut summary =
        CsvText::new("label,seed,stage,epsilon,iterations,converged,marginal_error,tail_rate");
    for r in &output.summary {
        summary.row(&[
            r.label.clone(),
            r.seed.to_string(),
            r.stage.to_string(),
            fmt_f64(r.epsilon),
            r.iterations.to_string(),
            r.converged.to_string(),
            fmt_f64(r.marginal_error),
            opt_f64(r.tail_rate),
        ]);
    }
    let mut spectrum = CsvText::new("seed,epsilon,mode,rho,one_minus_rho,hessian_eig_low");
    for r in &output.spectrum {
        spectrum.row(&[
            r.seed.to_string(),
            fmt_f64(r.epsilon),
            r.mode.to_string(),
            fmt_f64(r.rho),
            fmt_f64(r.one_minus_rho),
            fmt_f64(r.hessian_eig_low),
        ]);
    }
    let manifest = serde_json::json!({
        "config": args.config.file_name().map(|s| s.to_string_lossy().into_owned()),
        "config_sha256": hash,
        "sknr_version": env!("CARGO_PKG_VERSION"),
        "files": ["trace.csv", "summary.csv", "spectrum.csv"],
    });
    let write =
        |name: &str, text: String| write_file(&out.join(name), &text).map_err(Failure::input);
    write("trace.csv", trace.into_string())?;
    write("summary.csv", summary.into_string())?;
    write("spectrum.csv", spectrum.into_string())?;
    if args.timings {
        write("timing.csv", timing.into_string())?;
    }
    write(
        "manifest.json",
        serde_json::to_string_pretty(&manifest).expect("serializable") + "\n",
    )?;
    println!("config_sha256={hash} out={}", out.display());
    let all_converged = output.summary.iter().all(|r| r.converged);
    Ok(if all_converged {
        EXIT_OK
    } else {
        EXIT_MAX_ITER
    })
}
