//! `sknr`: solve, inspect and benchmark entropic optimal transport problems.
//!
//! Exit codes: 0 success, 1 input or configuration error, 2 iteration budget
//! exhausted before convergence, 3 eigensolver failure.

mod commands;
mod io;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{ArgGroup, Args, Parser, Subcommand, ValueEnum};

#[derive(Parser, Debug)]
#[command(
    name = "sknr",
    version,
    about = "Sinkhorn with low-dimensional Newton corrections"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Solve one problem with Sinkhorn or SK-NR(ℓ).
    Solve(SolveArgs),
    /// Dominant modes of the Sinkhorn linearization at the solution, per ε.
    Spectrum(SpectrumArgs),
    /// Solve a decreasing ε schedule with warm starts.
    Anneal(AnnealArgs),
    /// Run paired experiments described by a JSON config.
    Experiment(ExperimentArgs),
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
pub enum Synthetic {
    /// N(0, I) to N((4,4), [[1,-0.8],[-0.8,1]]); defaults n=200, m=400.
    Gauss2d,
    /// Upper to lower moon with noise 0.05; n points per moon (default 200).
    Moons,
    /// Annulus (radii 0.5, 1) to square of side 2; defaults n=m=200.
    AnnulusSquare,
}

/// Exactly one instance source.
#[derive(Args, Debug, Clone)]
#[command(group(ArgGroup::new("source").required(true).args(["points", "cost", "synthetic"])))]
pub struct InstanceArgs {
    /// Source and target point-cloud CSVs; squared Euclidean cost.
    /// One point per row; a header ending in `weight` marks a weight column.
    #[arg(long, num_args = 2, value_names = ["SRC", "TGT"])]
    points: Option<Vec<PathBuf>>,
    /// Cost matrix CSV (n rows, m columns).
    #[arg(long, value_name = "FILE")]
    cost: Option<PathBuf>,
    /// Source weights for --cost (default uniform).
    #[arg(long, value_name = "FILE", requires = "cost")]
    alpha: Option<PathBuf>,
    /// Target weights for --cost (default uniform).
    #[arg(long, value_name = "FILE", requires = "cost")]
    beta: Option<PathBuf>,
    /// Named synthetic instance.
    #[arg(long, value_enum)]
    synthetic: Option<Synthetic>,
    /// Seed for --synthetic.
    #[arg(long, default_value_t = 0, requires = "synthetic")]
    seed: u64,
    /// Source size for --synthetic.
    #[arg(long, requires = "synthetic")]
    n: Option<usize>,
    /// Target size for --synthetic.
    #[arg(long, requires = "synthetic")]
    m: Option<usize>,
}

#[derive(Args, Debug)]
pub struct SolveArgs {
    #[command(flatten)]
    instance: InstanceArgs,
    /// Entropic regularization ε.
    #[arg(long)]
    epsilon: f64,
    /// Stop when ‖π1 − α‖₂ + ‖πᵀ1 − β‖₂ falls below this.
    #[arg(long, default_value_t = sknr::solver::DEFAULT_TOL_OMEGA)]
    tol: f64,
    /// Iteration budget.
    #[arg(long, default_value_t = sknr::solver::DEFAULT_MAX_ITER)]
    max_iter: usize,
    /// Newton subspace dimension ℓ (0 = plain Sinkhorn).
    #[arg(long, default_value_t = 0)]
    ell: usize,
    /// ε′ at which the Newton basis is computed (required when --ell > 0).
    #[arg(long, value_name = "EPS")]
    basis_from: Option<f64>,
    /// Directory for f.csv, g.csv, coupling.csv and trace.csv.
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct SpectrumArgs {
    #[command(flatten)]
    instance: InstanceArgs,
    /// Comma-separated ε values, solved in the given order with warm starts.
    #[arg(long, value_delimiter = ',', required = true)]
    epsilons: Vec<f64>,
    /// Number of modes.
    #[arg(long, default_value_t = 10)]
    k: usize,
    /// Include eigenvectors in the reports.
    #[arg(long)]
    vectors: bool,
    /// Solver tolerance used before extracting modes.
    #[arg(long, default_value_t = 1e-10)]
    tol: f64,
    /// Eigen-residual tolerance `‖R̃R̃ᵀv - ρ²v‖`.
    #[arg(long, default_value_t = sknr::spectral::DEFAULT_EIGEN_TOL)]
    eigen_tol: f64,
    /// Subspace-iteration budget; defaults to 500·k.
    #[arg(long)]
    max_power_iters: Option<usize>,
    /// Output directory for spectrum_<index>.json.
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
}

#[derive(Args, Debug)]
pub struct AnnealArgs {
    #[command(flatten)]
    instance: InstanceArgs,
    /// Comma-separated, strictly decreasing ε schedule.
    #[arg(long, value_delimiter = ',', required = true)]
    schedule: Vec<f64>,
    /// Warm start between stages: none, potentials or spectral.
    #[arg(long, default_value = "potentials")]
    warm: sknr::WarmMode,
    /// Newton subspace dimension for spectral warm starts.
    #[arg(long, default_value_t = 0)]
    ell: usize,
    /// Rebuild the basis at every stage.
    #[arg(long)]
    refresh_basis: bool,
    #[arg(long, default_value_t = sknr::solver::DEFAULT_TOL_OMEGA)]
    tol: f64,
    #[arg(long, default_value_t = sknr::solver::DEFAULT_MAX_ITER)]
    max_iter: usize,
    /// Directory for per-stage results and trace.csv.
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct ExperimentArgs {
    /// JSON experiment description.
    #[arg(long, value_name = "FILE")]
    config: PathBuf,
    /// Output directory (default sknr-runs/<config hash prefix>).
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Also write timing.csv (wall-clock times differ between runs).
    #[arg(long)]
    timings: bool,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            // Usage errors are input errors; help and version are not errors.
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    let outcome = match cli.command {
        Command::Solve(args) => commands::solve(&args),
        Command::Spectrum(args) => commands::spectrum(&args),
        Command::Anneal(args) => commands::anneal(&args),
        Command::Experiment(args) => commands::experiment(&args),
    };
    match outcome {
        Ok(code) => ExitCode::from(code),
        Err(failure) => {
            eprintln!("error: {:#}", failure.error);
            ExitCode::from(failure.code)
        }
    }
}
