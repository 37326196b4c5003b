//! Dual and semi-dual objective values with their first and second derivatives.
//!
//! Gradients are Euclidean coordinate vectors: `grad_i` is the directional
//! derivative of `Q^semi` along the `i`-th coordinate direction, i.e.
//! `grad_i = α_i - Σ_j β_j p_j(i)` where
//! `p_j(i) = α_i exp((f_i + f^{C,ε}_j - C_ij)/ε)` is the column-conditional law.

use nalgebra::{DMatrix, DVector};

use crate::eot::{ctransform_of_f, EotProblem, Potentials};
use crate::error::{Error, Result};
use crate::spectral::SpectralBasis;

/// Largest `n` for which [`full_semi_dual_hessian`] builds a dense matrix.
pub const DEFAULT_DENSE_LIMIT: usize = 2000;

/// `∇_V Q^semi` and `∇²_V Q^semi` in the coordinates of a basis `V`.
#[derive(Debug, Clone, PartialEq)]
pub struct RestrictedDerivatives {
    pub grad: DVector<f64>,
    pub hess: DMatrix<f64>,
}

/// The column-conditional distributions `p_j(·)` at `f`, with `g = f^{C,ε}`.
///
/// One pass over the cost matrix produces the transform and the (column
/// normalized) probabilities, so every derivative below costs a single sweep
/// of `n·m` exponentials.
#[derive(Debug, Clone)]
pub struct ColumnConditionals {
    probs: DMatrix<f64>,
    transform: DVector<f64>,
    row_mass: DVector<f64>,
    epsilon: f64,
}

impl ColumnConditionals {
    pub fn new(problem: &EotProblem, f: &DVector<f64>) -> Self {
        assert_eq!(f.len(), problem.n(), "f must have length n");
        let eps = problem.epsilon();
        let n = problem.n();
        let cost = problem.cost().entries();
        let log_alpha = problem.alpha().log_weights();
        let scaled: Vec<f64> = f
            .iter()
            .zip(log_alpha.iter())
            .map(|(fi, la)| fi / eps + la)
            .collect();

        let mut probs = DMatrix::zeros(n, problem.m());
        let mut transform = DVector::zeros(problem.m());
        for (j, column) in cost.column_iter().enumerate() {
            let mut out = probs.column_mut(j);
            let mut max = f64::NEG_INFINITY;
            for i in 0..n {
                out[i] = scaled[i] - column[i] / eps;
                max = max.max(out[i]);
            }
            let mut sum = 0.0;
            for i in 0..n {
                out[i] = (out[i] - max).exp();
                sum += out[i];
            }
            out /= sum;
            transform[j] = -eps * (max + sum.ln());
        }
        let row_mass = &probs * problem.beta().weights();
        Self {
            probs,
            transform,
            row_mass,
            epsilon: eps,
        }
    }

    /// `f^{C,ε}`.
    pub fn transform(&self) -> &DVector<f64> {
        &self.transform
    }

    pub fn into_transform(self) -> DVector<f64> {
        self.transform
    }

    /// `n × m` matrix whose column `j` is `p_j(·)`.
    pub fn probabilities(&self) -> &DMatrix<f64> {
        &self.probs
    }

    /// `Σ_j β_j p_j(i)`, the row marginal of the coupling built from `(f, f^{C,ε})`.
    pub fn row_mass(&self) -> &DVector<f64> {
        &self.row_mass
    }

    pub fn value(&self, problem: &EotProblem, f: &DVector<f64>) -> f64 {
        problem.alpha().integrate(f) + problem.beta().integrate(&self.transform)
    }

    pub fn gradient(&self, problem: &EotProblem) -> DVector<f64> {
        problem.alpha().weights() - &self.row_mass
    }

    pub fn hessian_quadform(&self, problem: &EotProblem, u: &DVector<f64>) -> f64 {
        let beta = problem.beta().weights();
        let mut total = 0.0;
        for (j, p) in self.probs.column_iter().enumerate() {
            let mut first = 0.0;
            let mut second = 0.0;
            for (pi, ui) in p.iter().zip(u.iter()) {
                first += pi * ui;
                second += pi * ui * ui;
            }
            total += beta[j] * (second - first * first);
        }
        -total / self.epsilon
    }

    /// Gradient and Hessian in the coordinates of the columns of `vectors`.
    ///
    /// Costs one `ℓ × n × m` product for the conditional means plus
    /// `O(ℓ²(n + m))` for the cross moments.
    pub fn restricted(
        &self,
        problem: &EotProblem,
        vectors: &DMatrix<f64>,
    ) -> Result<RestrictedDerivatives> {
        if vectors.nrows() != problem.n() {
            return Err(Error::DimensionMismatch {
                what: "basis dimension",
                expected: problem.n(),
                got: vectors.nrows(),
            });
        }
        if vectors.ncols() == 0 {
            return Err(Error::InvalidArgument("basis has no columns".into()));
        }
        let grad = vectors.tr_mul(&self.gradient(problem));
        // E[a][j] = Σ_i p_j(i) v_a(i)
        let means = vectors.tr_mul(&self.probs);
        let mut weighted_vectors = vectors.clone();
        for (i, mut row) in weighted_vectors.row_iter_mut().enumerate() {
            row *= self.row_mass[i];
        }
        let second = vectors.tr_mul(&weighted_vectors);
        let mut scaled_means = means.clone();
        for (j, mut col) in scaled_means.column_iter_mut().enumerate() {
            col *= problem.beta().weights()[j];
        }
        let cross = &means * scaled_means.transpose();
        let mut hess = (second - cross) / (-self.epsilon);
        symmetrize(&mut hess);
        Ok(RestrictedDerivatives { grad, hess })
    }

    /// Dense `n × n` Hessian `-(1/ε)(diag(r) - P diag(β) Pᵀ)`.
    pub fn full_hessian(&self, problem: &EotProblem) -> DMatrix<f64> {
        let mut scaled = self.probs.clone();
        for (j, mut col) in scaled.column_iter_mut().enumerate() {
            col *= problem.beta().weights()[j];
        }
        let mut h = &scaled * self.probs.transpose();
        for i in 0..h.nrows() {
            h[(i, i)] -= self.row_mass[i];
        }
        h /= self.epsilon;
        symmetrize(&mut h);
        h
    }

    /// `Q^semi(f + δ) - Q^semi(f)` together with `(f + δ)^{C,ε}`.
    ///
    /// The first-order part `⟨δ, ∇Q⟩` is separated from the remainder so the
    /// increment keeps its relative accuracy when it is far below the rounding
    /// level of `Q` itself. Falls back to a direct difference for steps with
    /// `|δ_i| > ε`.
    pub fn increment(
        &self,
        problem: &EotProblem,
        f: &DVector<f64>,
        delta: &DVector<f64>,
    ) -> (f64, DVector<f64>) {
        let eps = self.epsilon;
        if delta.amax() > eps {
            let shifted = f + delta;
            let transform = ctransform_of_f(problem, &shifted);
            let new_value =
                problem.alpha().integrate(&shifted) + problem.beta().integrate(&transform);
            return (new_value - self.value(problem, f), transform);
        }
        let x = delta / eps;
        let growth = x.map(f64::exp_m1);
        let s = self.probs.tr_mul(&growth);
        let linear = delta.dot(&self.gradient(problem));
        let curvature: f64 = self
            .row_mass
            .iter()
            .zip(x.iter())
            .map(|(r, xi)| r * expm1_minus_x(*xi))
            .sum();
        let correction: f64 = problem
            .beta()
            .weights()
            .iter()
            .zip(s.iter())
            .map(|(b, sj)| b * x_minus_log1p(*sj))
            .sum();
        let transform = DVector::from_fn(s.len(), |j, _| self.transform[j] - eps * s[j].ln_1p());
        (linear - eps * curvature + eps * correction, transform)
    }
}

fn symmetrize(h: &mut DMatrix<f64>) {
    let n = h.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let avg = 0.5 * (h[(i, j)] + h[(j, i)]);
            h[(i, j)] = avg;
            h[(j, i)] = avg;
        }
    }
}

/// `e^x - 1 - x` without cancellation near zero.
fn expm1_minus_x(x: f64) -> f64 {
    if x.abs() < 1e-2 {
        // Horner form of Σ_{k=2..9} x^k / k!
        let mut acc = 1.0 / 362_880.0;
        for k in (2..=8).rev() {
            acc = acc * x + 1.0 / factorial(k);
        }
        acc * x * x
    } else {
        x.exp_m1() - x
    }
}

/// `s - log(1 + s)` without cancellation near zero.
fn x_minus_log1p(s: f64) -> f64 {
    if s.abs() < 1e-2 {
        // Σ_{k=2..10} (-1)^k s^k / k
        let mut acc = 0.0;
        for k in (2..=10).rev() {
            let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
            acc = acc * s + sign / k as f64;
        }
        acc * s * s
    } else {
        s - s.ln_1p()
    }
}

fn factorial(k: u32) -> f64 {
    (1..=k).map(f64::from).product()
}

/// `Q_ε(f, g) = ⟨f,α⟩ + ⟨g,β⟩ - ε(Σ_ij α_i β_j exp((f_i+g_j-C_ij)/ε) - 1)`.
pub fn dual_value(problem: &EotProblem, pots: &Potentials) -> f64 {
    let la = problem.alpha().log_weights();
    let lb = problem.beta().log_weights();
    let mut mass = 0.0;
    for j in 0..problem.m() {
        for i in 0..problem.n() {
            mass += (problem.log_kernel(pots.f[i], pots.g[j], i, j) + la[i] + lb[j]).exp();
        }
    }
    problem.alpha().integrate(&pots.f) + problem.beta().integrate(&pots.g)
        - problem.epsilon() * (mass - 1.0)
}

/// `Q^semi(f) = ⟨f,α⟩ + ⟨f^{C,ε},β⟩`.
pub fn semi_dual_value(problem: &EotProblem, f: &DVector<f64>) -> f64 {
    problem.alpha().integrate(f) + problem.beta().integrate(&ctransform_of_f(problem, f))
}

pub fn semi_dual_gradient(problem: &EotProblem, f: &DVector<f64>) -> DVector<f64> {
    ColumnConditionals::new(problem, f).gradient(problem)
}

/// `-(1/ε) Σ_j β_j Var_{p_j}(u)`.
pub fn semi_dual_hessian_quadform(problem: &EotProblem, f: &DVector<f64>, u: &DVector<f64>) -> f64 {
    assert_eq!(u.len(), problem.n(), "u must have length n");
    ColumnConditionals::new(problem, f).hessian_quadform(problem, u)
}

/// Accurate `Q^semi(f + δ) - Q^semi(f)`; see [`ColumnConditionals::increment`].
pub fn semi_dual_increment(problem: &EotProblem, f: &DVector<f64>, delta: &DVector<f64>) -> f64 {
    ColumnConditionals::new(problem, f)
        .increment(problem, f, delta)
        .0
}

pub fn restricted_derivatives(
    problem: &EotProblem,
    f: &DVector<f64>,
    basis: &SpectralBasis,
) -> Result<RestrictedDerivatives> {
    if basis.dimension() != problem.n() {
        return Err(Error::DimensionMismatch {
            what: "basis dimension",
            expected: problem.n(),
            got: basis.dimension(),
        });
    }
    ColumnConditionals::new(problem, f).restricted(problem, basis.vectors())
}

pub fn full_semi_dual_hessian(problem: &EotProblem, f: &DVector<f64>) -> Result<DMatrix<f64>> {
    full_semi_dual_hessian_with_limit(problem, f, DEFAULT_DENSE_LIMIT)
}

pub fn full_semi_dual_hessian_with_limit(
    problem: &EotProblem,
    f: &DVector<f64>,
    limit: usize,
) -> Result<DMatrix<f64>> {
    if problem.n() > limit {
        return Err(Error::DenseTooLarge {
            n: problem.n(),
            limit,
        });
    }
    Ok(ColumnConditionals::new(problem, f).full_hessian(problem))
}

/// `D_α^{-1/2} ∇²Q^semi D_α^{-1/2}`: the Hessian in the coordinates where the
/// `L²(α)` inner product is Euclidean. At the optimum it equals `-(Id - R̃R̃ᵀ)/ε`.
pub fn symmetrized_semi_dual_hessian(
    problem: &EotProblem,
    f: &DVector<f64>,
) -> Result<DMatrix<f64>> {
    let h = full_semi_dual_hessian(problem, f)?;
    let inv_sqrt = problem.alpha().weights().map(|a| 1.0 / a.sqrt());
    Ok(DMatrix::from_fn(h.nrows(), h.ncols(), |i, j| {
        inv_sqrt[i] * h[(i, j)] * inv_sqrt[j]
    }))
}
