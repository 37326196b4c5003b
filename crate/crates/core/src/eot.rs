//! Problem representation and the log-domain kernels everything else is built on.
//!
//! No Gibbs kernel `exp(-C/ε)` is ever stored. Every exponential is formed
//! per entry from `(f_i + g_j - C_ij)/ε` plus log-weights, so the routines stay
//! finite for costs of order `1e4` at `ε = 1e-3`.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Tolerance on `Σ w_i = 1` accepted by [`DiscreteMeasure::new`].
pub const MASS_TOLERANCE: f64 = 1e-12;

/// Neumaier-compensated sum; its error does not grow with the length.
pub fn compensated_sum(values: &[f64]) -> f64 {
    let mut sum = 0.0;
    let mut carry = 0.0;
    for &x in values {
        let t = sum + x;
        if sum.abs() >= x.abs() {
            carry += (sum - t) + x;
        } else {
            carry += (x - t) + sum;
        }
        sum = t;
    }
    sum + carry
}

/// Probability weights over a finite support. All weights are strictly positive.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteMeasure {
    weights: DVector<f64>,
    log_weights: DVector<f64>,
}

impl DiscreteMeasure {
    pub fn new(weights: Vec<f64>) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::InvalidMeasure("no support points".into()));
        }
        if let Some((i, w)) = weights
            .iter()
            .enumerate()
            .find(|(_, w)| !w.is_finite() || **w <= 0.0)
        {
            return Err(Error::InvalidMeasure(format!(
                "weight {i} is {w}; weights must be finite and strictly positive"
            )));
        }
        let total = compensated_sum(&weights);
        if (total - 1.0).abs() > MASS_TOLERANCE {
            return Err(Error::InvalidMeasure(format!(
                "weights sum to {total:.17e}, expected 1"
            )));
        }
        let log_weights = weights.iter().map(|w| w.ln()).collect::<Vec<_>>();
        Ok(Self {
            weights: DVector::from_vec(weights),
            log_weights: DVector::from_vec(log_weights),
        })
    }

    /// Rescales positive weights to unit mass before validating.
    pub fn normalized(weights: Vec<f64>) -> Result<Self> {
        let total = compensated_sum(&weights);
        if !(total.is_finite() && total > 0.0) {
            return Err(Error::InvalidMeasure(format!(
                "total mass {total} is not positive"
            )));
        }
        Self::new(weights.into_iter().map(|w| w / total).collect())
    }

    pub fn uniform(n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidMeasure("no support points".into()));
        }
        Self::new(vec![1.0 / n as f64; n])
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn weights(&self) -> &DVector<f64> {
        &self.weights
    }

    pub fn log_weights(&self) -> &DVector<f64> {
        &self.log_weights
    }

    /// `⟨v, w⟩`, the integral of `v` against the measure.
    pub fn integrate(&self, v: &DVector<f64>) -> f64 {
        self.weights.dot(v)
    }
}

/// Dense `n × m` cost matrix with finite entries. Negative entries are allowed.
#[derive(Debug, Clone, PartialEq)]
pub struct CostMatrix {
    entries: DMatrix<f64>,
}

impl CostMatrix {
    pub fn new(entries: DMatrix<f64>) -> Result<Self> {
        if entries.nrows() == 0 || entries.ncols() == 0 {
            return Err(Error::InvalidCost(
                "cost matrix must be at least 1x1".into(),
            ));
        }
        if let Some(pos) = entries.iter().position(|c| !c.is_finite()) {
            let (i, j) = (pos % entries.nrows(), pos / entries.nrows());
            return Err(Error::InvalidCost(format!(
                "entry ({i}, {j}) is not finite"
            )));
        }
        Ok(Self { entries })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        let m = rows.first().map_or(0, Vec::len);
        if let Some(i) = rows.iter().position(|r| r.len() != m) {
            return Err(Error::InvalidCost(format!(
                "row {i} has {} entries, expected {m}",
                rows[i].len()
            )));
        }
        Self::new(DMatrix::from_fn(n, m, |i, j| rows[i][j]))
    }

    pub fn zeros(n: usize, m: usize) -> Result<Self> {
        Self::new(DMatrix::zeros(n, m))
    }

    pub fn nrows(&self) -> usize {
        self.entries.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.entries.ncols()
    }

    pub fn entries(&self) -> &DMatrix<f64> {
        &self.entries
    }
}

/// A full problem instance: cost, both marginals and the regularization `ε`.
///
/// Cheap to clone; the cost and the measures are shared.
#[derive(Debug, Clone)]
pub struct EotProblem {
    cost: Arc<CostMatrix>,
    alpha: Arc<DiscreteMeasure>,
    beta: Arc<DiscreteMeasure>,
    epsilon: f64,
}

impl EotProblem {
    pub fn new(
        cost: CostMatrix,
        alpha: DiscreteMeasure,
        beta: DiscreteMeasure,
        epsilon: f64,
    ) -> Result<Self> {
        Self::from_shared(Arc::new(cost), Arc::new(alpha), Arc::new(beta), epsilon)
    }

    pub fn from_shared(
        cost: Arc<CostMatrix>,
        alpha: Arc<DiscreteMeasure>,
        beta: Arc<DiscreteMeasure>,
        epsilon: f64,
    ) -> Result<Self> {
        if alpha.len() != cost.nrows() {
            return Err(Error::DimensionMismatch {
                what: "alpha length vs cost rows",
                expected: cost.nrows(),
                got: alpha.len(),
            });
        }
        if beta.len() != cost.ncols() {
            return Err(Error::DimensionMismatch {
                what: "beta length vs cost columns",
                expected: cost.ncols(),
                got: beta.len(),
            });
        }
        if !(epsilon.is_finite() && epsilon > 0.0) {
            return Err(Error::InvalidEpsilon(epsilon));
        }
        Ok(Self {
            cost,
            alpha,
            beta,
            epsilon,
        })
    }

    /// Same cost and marginals at a different regularization.
    pub fn with_epsilon(&self, epsilon: f64) -> Result<Self> {
        Self::from_shared(
            Arc::clone(&self.cost),
            Arc::clone(&self.alpha),
            Arc::clone(&self.beta),
            epsilon,
        )
    }

    pub fn n(&self) -> usize {
        self.cost.nrows()
    }

    pub fn m(&self) -> usize {
        self.cost.ncols()
    }

    pub fn cost(&self) -> &CostMatrix {
        &self.cost
    }

    pub fn alpha(&self) -> &DiscreteMeasure {
        &self.alpha
    }

    pub fn beta(&self) -> &DiscreteMeasure {
        &self.beta
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    /// `(f_i + g_j - C_ij) / ε`.
    #[inline]
    pub(crate) fn log_kernel(&self, f_i: f64, g_j: f64, i: usize, j: usize) -> f64 {
        (f_i + g_j - self.cost.entries[(i, j)]) / self.epsilon
    }
}

/// Kantorovich potentials `(f, g)`, defined up to `(f + c, g - c)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Potentials {
    pub f: DVector<f64>,
    pub g: DVector<f64>,
}

impl Potentials {
    pub fn new(f: DVector<f64>, g: DVector<f64>) -> Result<Self> {
        if f.iter().chain(g.iter()).any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("potentials must be finite".into()));
        }
        Ok(Self { f, g })
    }

    pub fn zeros(n: usize, m: usize) -> Self {
        Self {
            f: DVector::zeros(n),
            g: DVector::zeros(m),
        }
    }

    pub fn zeros_for(problem: &EotProblem) -> Self {
        Self::zeros(problem.n(), problem.m())
    }

    /// Moves the gauge so that `Σ α_i f_i = 0`.
    pub fn normalize_gauge(&mut self, alpha: &DiscreteMeasure) -> f64 {
        let shift = alpha.integrate(&self.f);
        self.f.add_scalar_mut(-shift);
        self.g.add_scalar_mut(shift);
        shift
    }

    pub fn gauge_normalized(&self, alpha: &DiscreteMeasure) -> Self {
        let mut out = self.clone();
        out.normalize_gauge(alpha);
        out
    }

    /// Max-norm distance between two pairs after normalizing both gauges.
    pub fn gauge_distance(&self, other: &Potentials, alpha: &DiscreteMeasure) -> f64 {
        let a = self.gauge_normalized(alpha);
        let b = other.gauge_normalized(alpha);
        (&a.f - &b.f).amax().max((&a.g - &b.g).amax())
    }
}

/// A transport plan.
#[derive(Debug, Clone, PartialEq)]
pub struct Coupling {
    pub plan: DMatrix<f64>,
}

impl Coupling {
    /// `π 1_m`
    pub fn row_marginal(&self) -> DVector<f64> {
        self.plan.column_sum()
    }

    /// `πᵀ 1_n`
    pub fn column_marginal(&self) -> DVector<f64> {
        self.plan.row_sum().transpose()
    }

    pub fn total_mass(&self) -> f64 {
        self.plan.sum()
    }
}

/// `log Σ_i exp(values_i + log_weights_i)`, shifted by the maximum before exponentiation.
pub fn log_sum_exp(values: &[f64], log_weights: &[f64]) -> Result<f64> {
    if values.is_empty() || log_weights.is_empty() {
        return Err(Error::EmptyReduction);
    }
    if values.len() != log_weights.len() {
        return Err(Error::DimensionMismatch {
            what: "log_sum_exp log_weights length",
            expected: values.len(),
            got: log_weights.len(),
        });
    }
    let shifted = || values.iter().zip(log_weights).map(|(v, w)| v + w);
    let max = shifted().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = shifted().map(|a| (a - max).exp()).sum();
    Ok(max + sum.ln())
}

/// `g = f^{C,ε}`: `g_j = -ε log Σ_i α_i exp((f_i - C_ij)/ε)`.
pub fn ctransform_of_f(problem: &EotProblem, f: &DVector<f64>) -> DVector<f64> {
    assert_eq!(f.len(), problem.n(), "f must have length n");
    let eps = problem.epsilon();
    let cost = problem.cost().entries();
    let log_alpha = problem.alpha().log_weights();
    let scaled: Vec<f64> = f
        .iter()
        .zip(log_alpha.iter())
        .map(|(fi, la)| fi / eps + la)
        .collect();
    DVector::from_fn(problem.m(), |j, _| {
        let column = cost.column(j);
        let exponent = |i: usize| scaled[i] - column[i] / eps;
        let max = (0..column.len())
            .map(exponent)
            .fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = (0..column.len()).map(|i| (exponent(i) - max).exp()).sum();
        -eps * (max + sum.ln())
    })
}

/// `f = g^{C,ε}`: `f_i = -ε log Σ_j β_j exp((g_j - C_ij)/ε)`.
pub fn ctransform_of_g(problem: &EotProblem, g: &DVector<f64>) -> DVector<f64> {
    assert_eq!(g.len(), problem.m(), "g must have length m");
    let eps = problem.epsilon();
    let cost = problem.cost().entries();
    let n = problem.n();
    let log_beta = problem.beta().log_weights();
    let scaled: Vec<f64> = g
        .iter()
        .zip(log_beta.iter())
        .map(|(gj, lb)| gj / eps + lb)
        .collect();

    // Columns are contiguous, so rows are reduced with per-row accumulators.
    let mut max = vec![f64::NEG_INFINITY; n];
    for (j, column) in cost.column_iter().enumerate() {
        for (i, c) in column.iter().enumerate() {
            max[i] = max[i].max(scaled[j] - c / eps);
        }
    }
    let mut sum = vec![0.0; n];
    for (j, column) in cost.column_iter().enumerate() {
        for (i, c) in column.iter().enumerate() {
            sum[i] += (scaled[j] - c / eps - max[i]).exp();
        }
    }
    DVector::from_fn(n, |i, _| -eps * (max[i] + sum[i].ln()))
}

/// `π_ij = α_i β_j exp((f_i + g_j - C_ij)/ε)`, the exponent formed per entry.
pub fn coupling_from(problem: &EotProblem, pots: &Potentials) -> Coupling {
    let a = problem.alpha().weights();
    let b = problem.beta().weights();
    let plan = DMatrix::from_fn(problem.n(), problem.m(), |i, j| {
        a[i] * b[j] * problem.log_kernel(pots.f[i], pots.g[j], i, j).exp()
    });
    Coupling { plan }
}

/// Marginal violations of a plan, in both the Euclidean and the max norm.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct MarginalErrors {
    pub row_l2: f64,
    pub col_l2: f64,
    pub row_inf: f64,
    pub col_inf: f64,
}

impl MarginalErrors {
    fn from_residuals(row: &DVector<f64>, col: &DVector<f64>) -> Self {
        Self {
            row_l2: row.norm(),
            col_l2: col.norm(),
            row_inf: row.amax(),
            col_inf: col.amax(),
        }
    }

    /// `‖π1 - α‖₂ + ‖πᵀ1 - β‖₂`, the stopping criterion.
    pub fn total(&self) -> f64 {
        self.row_l2 + self.col_l2
    }

    pub fn total_inf(&self) -> f64 {
        self.row_inf + self.col_inf
    }
}

pub fn marginal_errors(problem: &EotProblem, plan: &Coupling) -> MarginalErrors {
    assert_eq!(plan.plan.shape(), (problem.n(), problem.m()), "plan shape");
    let row = plan.row_marginal() - problem.alpha().weights();
    let col = plan.column_marginal() - problem.beta().weights();
    MarginalErrors::from_residuals(&row, &col)
}

/// `‖π1_m - α‖₂ + ‖πᵀ1_n - β‖₂`.
pub fn marginal_error(problem: &EotProblem, plan: &Coupling) -> f64 {
    marginal_errors(problem, plan).total()
}

/// Marginal errors of `coupling_from(pots)` without forming the plan.
///
/// Uses the identities `(π1)_i = α_i exp((f_i - (g^{C,ε})_i)/ε)` and
/// `(πᵀ1)_j = β_j exp((g_j - (f^{C,ε})_j)/ε)`, so callers that already hold
/// both transforms pay `O(n + m)`.
pub fn marginal_errors_from_transforms(
    problem: &EotProblem,
    pots: &Potentials,
    f_of_g: &DVector<f64>,
    g_of_f: &DVector<f64>,
) -> MarginalErrors {
    let eps = problem.epsilon();
    let row = DVector::from_fn(problem.n(), |i, _| {
        problem.alpha().weights()[i] * ((pots.f[i] - f_of_g[i]) / eps).exp_m1()
    });
    let col = DVector::from_fn(problem.m(), |j, _| {
        problem.beta().weights()[j] * ((pots.g[j] - g_of_f[j]) / eps).exp_m1()
    });
    MarginalErrors::from_residuals(&row, &col)
}

/// `max v - min v`.
pub fn osc_norm(v: &[f64]) -> Result<f64> {
    if v.is_empty() {
        return Err(Error::EmptyReduction);
    }
    let (lo, hi) = v
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &x| {
            (lo.min(x), hi.max(x))
        });
    Ok(hi - lo)
}
