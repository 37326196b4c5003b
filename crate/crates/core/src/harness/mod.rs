//! Instance generators, the reference oracle and experiment drivers.
//!
//! Random clouds come from ChaCha20 (`rand_chacha` 0.9, `seed_from_u64`) with
//! normals from `rand_distr` 0.5 `StandardNormal`. Both streams are fixed
//! per crate version, so a seed identifies a cloud across platforms.

mod experiment;
mod generators;
mod linearization;
mod oracle;

pub use experiment::{
    run_experiment, ExperimentOutput, ExperimentSpec, RunSpec, SpectrumRow, SpectrumSweep,
    SummaryRow, TraceRow,
};
pub use generators::{
    annulus_and_square, gaussian_cloud, sq_euclidean_cost, two_moons, Instance, PointCloud,
};
pub use linearization::{linearization_check, linearization_residual, LinearizationReport};
pub use oracle::{oracle_solve, OracleSolution};
