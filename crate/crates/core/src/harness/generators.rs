use nalgebra::{DMatrix, Matrix2, Vector2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::eot::{CostMatrix, DiscreteMeasure, EotProblem};
use crate::error::{Error, Result};

/// Weighted points in `R^d`, one point per row of `points`.
#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    points: DMatrix<f64>,
    weights: DiscreteMeasure,
}

impl PointCloud {
    pub fn new(points: DMatrix<f64>, weights: DiscreteMeasure) -> Result<Self> {
        if points.nrows() != weights.len() {
            return Err(Error::DimensionMismatch {
                what: "weights length vs point count",
                expected: points.nrows(),
                got: weights.len(),
            });
        }
        if points.ncols() == 0 {
            return Err(Error::InvalidArgument(
                "points must have at least one coordinate".into(),
            ));
        }
        if let Some(k) = points.iter().position(|x| !x.is_finite()) {
            let (i, j) = (k % points.nrows(), k / points.nrows());
            return Err(Error::InvalidArgument(format!(
                "coordinate ({i}, {j}) is not finite"
            )));
        }
        Ok(Self { points, weights })
    }

    /// Uniform weights.
    pub fn uniform(points: DMatrix<f64>) -> Result<Self> {
        let weights = DiscreteMeasure::uniform(points.nrows())?;
        Self::new(points, weights)
    }

    pub fn len(&self) -> usize {
        self.points.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.points.nrows() == 0
    }

    pub fn dim(&self) -> usize {
        self.points.ncols()
    }

    pub fn points(&self) -> &DMatrix<f64> {
        &self.points
    }

    pub fn weights(&self) -> &DiscreteMeasure {
        &self.weights
    }

    pub fn point(&self, i: usize) -> Vec<f64> {
        self.points.row(i).iter().copied().collect()
    }
}

fn rng_for(seed: u64) -> ChaCha20Rng {
    ChaCha20Rng::seed_from_u64(seed)
}

/// `count` i.i.d. draws from `N(mean, covariance)` with uniform weights.
pub fn gaussian_cloud(
    count: usize,
    mean: [f64; 2],
    covariance: [[f64; 2]; 2],
    seed: u64,
) -> Result<PointCloud> {
    if count == 0 {
        return Err(Error::InvalidArgument("count must be positive".into()));
    }
    let cov = Matrix2::new(
        covariance[0][0],
        covariance[0][1],
        covariance[1][0],
        covariance[1][1],
    );
    if cov.iter().any(|x| !x.is_finite()) || (cov[(0, 1)] - cov[(1, 0)]).abs() > 0.0 {
        return Err(Error::InvalidArgument(
            "covariance must be finite and symmetric".into(),
        ));
    }
    let chol = cov
        .cholesky()
        .ok_or_else(|| Error::InvalidArgument("covariance is not positive definite".into()))?;
    let l = chol.l();
    let mut rng = rng_for(seed);
    let mut points = DMatrix::zeros(count, 2);
    for i in 0..count {
        let z = Vector2::new(rng.sample(StandardNormal), rng.sample(StandardNormal));
        let x = l * z;
        points[(i, 0)] = mean[0] + x[0];
        points[(i, 1)] = mean[1] + x[1];
    }
    PointCloud::uniform(points)
}

/// Upper moon `(cos t, sin t)` and lower moon `(1 - cos t, 1/2 - sin t)`, `t ~ U[0, π]`,
/// each perturbed by isotropic Gaussian noise of standard deviation `noise`.
pub fn two_moons(count_per_moon: usize, noise: f64, seed: u64) -> Result<(PointCloud, PointCloud)> {
    if count_per_moon == 0 {
        return Err(Error::InvalidArgument(
            "count_per_moon must be positive".into(),
        ));
    }
    if !(noise.is_finite() && noise >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "noise must be finite and >= 0, got {noise}"
        )));
    }
    let mut rng = rng_for(seed);
    let mut upper = DMatrix::zeros(count_per_moon, 2);
    let mut lower = DMatrix::zeros(count_per_moon, 2);
    for moon in [&mut upper, &mut lower] {
        for i in 0..count_per_moon {
            let t: f64 = rng.random::<f64>() * std::f64::consts::PI;
            moon[(i, 0)] = t.cos();
            moon[(i, 1)] = t.sin();
        }
    }
    for i in 0..count_per_moon {
        lower[(i, 0)] = 1.0 - lower[(i, 0)];
        lower[(i, 1)] = 0.5 - lower[(i, 1)];
    }
    if noise > 0.0 {
        for moon in [&mut upper, &mut lower] {
            for x in moon.iter_mut() {
                let z: f64 = rng.sample(StandardNormal);
                *x += noise * z;
            }
        }
    }
    Ok((PointCloud::uniform(upper)?, PointCloud::uniform(lower)?))
}

/// Uniform samples on the annulus `r_in ≤ ‖p‖ ≤ r_out` and on the square `[-side/2, side/2]²`,
/// both centered at the origin.
pub fn annulus_and_square(
    counts: (usize, usize),
    radii: (f64, f64),
    side: f64,
    seed: u64,
) -> Result<(PointCloud, PointCloud)> {
    let (n_annulus, n_square) = counts;
    let (r_in, r_out) = radii;
    if n_annulus == 0 || n_square == 0 {
        return Err(Error::InvalidArgument("counts must be positive".into()));
    }
    if !(r_in.is_finite() && r_out.is_finite() && r_in >= 0.0 && r_in < r_out) {
        return Err(Error::InvalidArgument(format!(
            "radii must satisfy 0 <= r_in < r_out, got ({r_in}, {r_out})"
        )));
    }
    if !(side.is_finite() && side > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "side must be positive, got {side}"
        )));
    }
    let mut rng = rng_for(seed);
    let mut annulus = DMatrix::zeros(n_annulus, 2);
    let mut filled = 0;
    while filled < n_annulus {
        let x = r_out * (2.0 * rng.random::<f64>() - 1.0);
        let y = r_out * (2.0 * rng.random::<f64>() - 1.0);
        let r = x.hypot(y);
        if r >= r_in && r <= r_out {
            annulus[(filled, 0)] = x;
            annulus[(filled, 1)] = y;
            filled += 1;
        }
    }
    let square = DMatrix::from_fn(n_square, 2, |_, _| side * (rng.random::<f64>() - 0.5));
    Ok((PointCloud::uniform(annulus)?, PointCloud::uniform(square)?))
}

/// `C_ij = ‖x_i - y_j‖²`.
pub fn sq_euclidean_cost(source: &PointCloud, target: &PointCloud) -> Result<CostMatrix> {
    if source.dim() != target.dim() {
        return Err(Error::DimensionMismatch {
            what: "point dimension",
            expected: source.dim(),
            got: target.dim(),
        });
    }
    let (x, y) = (source.points(), target.points());
    let entries = DMatrix::from_fn(source.len(), target.len(), |i, j| {
        (0..source.dim())
            .map(|k| (x[(i, k)] - y[(j, k)]).powi(2))
            .sum()
    });
    CostMatrix::new(entries)
}

/// Named synthetic instance families.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "kebab-case", deny_unknown_fields)]
pub enum Instance {
    /// Source `N(0, I)`, target `N((4,4), [[1,-0.8],[-0.8,1]])`.
    Gauss2d { n: usize, m: usize },
    /// Upper moon to lower moon.
    Moons {
        count_per_moon: usize,
        #[serde(default = "default_moon_noise")]
        noise: f64,
    },
    /// Annulus to square.
    AnnulusSquare {
        n: usize,
        m: usize,
        #[serde(default = "default_r_in")]
        r_in: f64,
        #[serde(default = "default_r_out")]
        r_out: f64,
        #[serde(default = "default_side")]
        side: f64,
    },
}

fn default_moon_noise() -> f64 {
    0.05
}

fn default_r_in() -> f64 {
    0.5
}

fn default_r_out() -> f64 {
    1.0
}

fn default_side() -> f64 {
    2.0
}

pub const TARGET_MEAN: [f64; 2] = [4.0, 4.0];
pub const TARGET_COVARIANCE: [[f64; 2]; 2] = [[1.0, -0.8], [-0.8, 1.0]];

impl Instance {
    pub fn gauss2d(n: usize, m: usize) -> Self {
        Self::Gauss2d { n, m }
    }

    pub fn moons(count_per_moon: usize) -> Self {
        Self::Moons {
            count_per_moon,
            noise: default_moon_noise(),
        }
    }

    pub fn annulus_square(n: usize, m: usize) -> Self {
        Self::AnnulusSquare {
            n,
            m,
            r_in: default_r_in(),
            r_out: default_r_out(),
            side: default_side(),
        }
    }

    /// Source and target clouds. Gaussian source and target use seeds `2s` and `2s + 1`.
    pub fn clouds(&self, seed: u64) -> Result<(PointCloud, PointCloud)> {
        match *self {
            Self::Gauss2d { n, m } => {
                let base = seed.wrapping_mul(2);
                let source = gaussian_cloud(n, [0.0, 0.0], [[1.0, 0.0], [0.0, 1.0]], base)?;
                let target =
                    gaussian_cloud(m, TARGET_MEAN, TARGET_COVARIANCE, base.wrapping_add(1))?;
                Ok((source, target))
            }
            Self::Moons {
                count_per_moon,
                noise,
            } => two_moons(count_per_moon, noise, seed),
            Self::AnnulusSquare {
                n,
                m,
                r_in,
                r_out,
                side,
            } => annulus_and_square((n, m), (r_in, r_out), side, seed),
        }
    }

    pub fn problem(&self, seed: u64, epsilon: f64) -> Result<EotProblem> {
        let (source, target) = self.clouds(seed)?;
        let cost = sq_euclidean_cost(&source, &target)?;
        EotProblem::new(
            cost,
            source.weights().clone(),
            target.weights().clone(),
            epsilon,
        )
    }
}
