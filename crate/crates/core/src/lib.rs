//! Spectrally accelerated Sinkhorn for discrete entropic optimal transport.
//!
//! The crate is organized bottom-up:
//!
//! * [`eot`]: measures, costs, potentials, log-domain c-transforms and couplings.
//! * [`objective`]: dual / semi-dual values and derivatives, including the
//!   gradient and Hessian restricted to a low-dimensional basis.
//! * [`spectral`]: the linearization operator `K_ε` of the Sinkhorn map and its
//!   dominant non-trivial modes.
//! * [`solver`]: Sinkhorn, SK-NR(ℓ) and ε-annealing with spectral warm starts.
//! * [`harness`]: synthetic instances, an independent high-precision oracle and
//!   experiment drivers.

pub mod eot;
pub mod error;
pub mod harness;
pub mod objective;
pub mod solver;
pub mod spectral;

pub use eot::{
    coupling_from, ctransform_of_f, ctransform_of_g, log_sum_exp, marginal_error, marginal_errors,
    osc_norm, CostMatrix, Coupling, DiscreteMeasure, EotProblem, MarginalErrors, Potentials,
};
pub use error::{Error, Result};
pub use objective::{
    dual_value, full_semi_dual_hessian, restricted_derivatives, semi_dual_gradient,
    semi_dual_hessian_quadform, semi_dual_value, RestrictedDerivatives,
};
pub use solver::{
    anneal, estimate_contraction, newton_step, sk_sweep, solve, AnnealSchedule, IterationRecord,
    SolveResult, SolverConfig, WarmMode,
};
pub use spectral::{
    build_operator, projector_distance, spectrum_report, spectrum_report_with, top_modes,
    SinkhornOperator, SpectralBasis, SpectrumReport,
};
