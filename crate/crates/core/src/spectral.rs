//! The Sinkhorn linearization operator `K_ε = [[0, R], [Rᵀ, 0]]` and its
//! dominant non-trivial modes.
//!
//! In potential coordinates `(R g₁)_i = Σ_j M_ij β_j g₁(j)` and
//! `(Rᵀ f₁)_j = Σ_i M_ij α_i f₁(i)` with `M_ij = exp((f_i + g_j - C_ij)/ε)`.
//! Eigenproblems are solved on the symmetrized block
//! `R̃ = D_{√α} M D_{√β}`, whose singular values are the `ρ`'s and whose
//! left singular vectors, divided by `√α`, are the semi-dual Hessian
//! eigenvectors. The Perron pair (`ρ₀ = 1`, constants) is always deflated.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::eot::{DiscreteMeasure, EotProblem, Potentials};
use crate::error::{Error, Result};

pub const DEFAULT_EIGEN_TOL: f64 = 1e-8;
/// Extra block columns carried by the subspace iteration.
pub const OVERSAMPLING: usize = 5;
const INIT_SEED: u64 = 0x5eed_0b10c;

pub fn default_max_power_iters(ell: usize) -> usize {
    500 * ell.max(1)
}

/// `K_ε` anchored at a pair of potentials (normally near-optimal).
#[derive(Debug, Clone)]
pub struct SinkhornOperator {
    problem: EotProblem,
    pots: Potentials,
    kernel: DMatrix<f64>,
    sqrt_alpha: DVector<f64>,
    sqrt_beta: DVector<f64>,
}

pub fn build_operator(problem: &EotProblem, pots: &Potentials) -> SinkhornOperator {
    assert_eq!(pots.f.len(), problem.n(), "f must have length n");
    assert_eq!(pots.g.len(), problem.m(), "g must have length m");
    let kernel = DMatrix::from_fn(problem.n(), problem.m(), |i, j| {
        problem.log_kernel(pots.f[i], pots.g[j], i, j).exp()
    });
    SinkhornOperator {
        problem: problem.clone(),
        pots: pots.clone(),
        kernel,
        sqrt_alpha: problem.alpha().weights().map(f64::sqrt),
        sqrt_beta: problem.beta().weights().map(f64::sqrt),
    }
}

impl SinkhornOperator {
    pub fn problem(&self) -> &EotProblem {
        &self.problem
    }

    pub fn potentials(&self) -> &Potentials {
        &self.pots
    }

    pub fn n(&self) -> usize {
        self.kernel.nrows()
    }

    pub fn m(&self) -> usize {
        self.kernel.ncols()
    }

    pub fn apply_r(&self, g1: &DVector<f64>) -> DVector<f64> {
        &self.kernel * g1.component_mul(self.problem.beta().weights())
    }

    pub fn apply_rt(&self, f1: &DVector<f64>) -> DVector<f64> {
        self.kernel
            .tr_mul(&f1.component_mul(self.problem.alpha().weights()))
    }

    /// `K_ε(f₁ ⊕ g₁) = (R g₁) ⊕ (Rᵀ f₁)`.
    pub fn apply_k(&self, f1: &DVector<f64>, g1: &DVector<f64>) -> (DVector<f64>, DVector<f64>) {
        (self.apply_r(g1), self.apply_rt(f1))
    }

    /// `R̃ = D_{√α} M D_{√β}`, an `n × m` matrix.
    pub fn symmetrized_block(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.n(), self.m(), |i, j| {
            self.sqrt_alpha[i] * self.kernel[(i, j)] * self.sqrt_beta[j]
        })
    }

    /// `K_ε` in the Dirac basis: `[[0, M D_β], [Mᵀ D_α, 0]]`. Non-negative, not symmetric.
    pub fn dense_k(&self) -> DMatrix<f64> {
        let (n, m) = (self.n(), self.m());
        let alpha = self.problem.alpha().weights();
        let beta = self.problem.beta().weights();
        let mut k = DMatrix::zeros(n + m, n + m);
        for i in 0..n {
            for j in 0..m {
                k[(i, n + j)] = self.kernel[(i, j)] * beta[j];
                k[(n + j, i)] = self.kernel[(i, j)] * alpha[i];
            }
        }
        k
    }

    /// Hermitization `[[0, R̃], [R̃ᵀ, 0]]`, similar to [`Self::dense_k`].
    pub fn dense_k_symmetric(&self) -> DMatrix<f64> {
        let (n, m) = (self.n(), self.m());
        let rt = self.symmetrized_block();
        let mut k = DMatrix::zeros(n + m, n + m);
        k.view_mut((0, n), (n, m)).copy_from(&rt);
        k.view_mut((n, 0), (m, n)).copy_from(&rt.transpose());
        k
    }
}

/// `ℓ` low-frequency directions of the semi-dual Hessian with their `ρ`'s.
///
/// Columns are orthonormal in `L²(α)`: `Σ_i α_i v_a(i) v_b(i) = δ_ab`, and
/// α-orthogonal to constants.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralBasis {
    vectors: DMatrix<f64>,
    rhos: Vec<f64>,
    epsilon_built_at: f64,
    sqrt_alpha: DVector<f64>,
}

impl SpectralBasis {
    /// Builds a basis from columns that are orthonormal in symmetrized coordinates.
    pub fn from_symmetric(
        symmetric: DMatrix<f64>,
        alpha: &DiscreteMeasure,
        rhos: Vec<f64>,
        epsilon_built_at: f64,
    ) -> Result<Self> {
        if symmetric.nrows() != alpha.len() {
            return Err(Error::DimensionMismatch {
                what: "basis dimension",
                expected: alpha.len(),
                got: symmetric.nrows(),
            });
        }
        if rhos.len() != symmetric.ncols() {
            return Err(Error::DimensionMismatch {
                what: "number of rho values",
                expected: symmetric.ncols(),
                got: rhos.len(),
            });
        }
        let gram = symmetric.tr_mul(&symmetric);
        let off = (gram - DMatrix::identity(symmetric.ncols(), symmetric.ncols())).amax();
        if off > 1e-10 {
            return Err(Error::InvalidArgument(format!(
                "basis columns are not orthonormal (deviation {off:.3e})"
            )));
        }
        let sqrt_alpha = alpha.weights().map(f64::sqrt);
        let mut vectors = symmetric;
        for (i, mut row) in vectors.row_iter_mut().enumerate() {
            row /= sqrt_alpha[i];
        }
        Ok(Self {
            vectors,
            rhos,
            epsilon_built_at,
            sqrt_alpha,
        })
    }

    /// Number of potential coordinates `n`.
    pub fn dimension(&self) -> usize {
        self.vectors.nrows()
    }

    pub fn len(&self) -> usize {
        self.vectors.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.ncols() == 0
    }

    /// `n × ℓ` matrix of directions in potential coordinates.
    pub fn vectors(&self) -> &DMatrix<f64> {
        &self.vectors
    }

    pub fn rhos(&self) -> &[f64] {
        &self.rhos
    }

    pub fn epsilon_built_at(&self) -> f64 {
        self.epsilon_built_at
    }

    /// Columns in symmetrized coordinates, `D_{√α} V`.
    pub fn symmetrized(&self) -> DMatrix<f64> {
        let mut w = self.vectors.clone();
        for (i, mut row) in w.row_iter_mut().enumerate() {
            row *= self.sqrt_alpha[i];
        }
        w
    }

    /// First `ell` columns.
    pub fn truncated(&self, ell: usize) -> Result<Self> {
        if ell == 0 || ell > self.len() {
            return Err(Error::InvalidArgument(format!(
                "cannot truncate a basis of {} vectors to {ell}",
                self.len()
            )));
        }
        Ok(Self {
            vectors: self.vectors.columns(0, ell).into_owned(),
            rhos: self.rhos[..ell].to_vec(),
            epsilon_built_at: self.epsilon_built_at,
            sqrt_alpha: self.sqrt_alpha.clone(),
        })
    }
}

fn deflate(block: &mut DMatrix<f64>, unit: &DVector<f64>) {
    for mut col in block.column_iter_mut() {
        let c = unit.dot(&col);
        col.axpy(-c, unit, 1.0);
    }
}

fn orthonormalize(block: DMatrix<f64>, unit: &DVector<f64>) -> DMatrix<f64> {
    let mut q = block.qr().q();
    deflate(&mut q, unit);
    q.qr().q()
}

/// Top `ell` non-trivial singular triplets of `R̃` by block subspace iteration
/// on `R̃R̃ᵀ` with a Rayleigh–Ritz projection every sweep.
///
/// A pair is accepted when `‖R̃R̃ᵀv - ρ²v‖ ≤ tol`.
pub fn top_modes(
    op: &SinkhornOperator,
    ell: usize,
    tol: f64,
    max_power_iters: usize,
) -> Result<SpectralBasis> {
    let n = op.n();
    if ell == 0 || ell >= n {
        return Err(Error::InvalidArgument(format!(
            "number of modes must satisfy 1 <= ell < n = {n}, got {ell}"
        )));
    }
    let rt = op.symmetrized_block();
    // √α has unit Euclidean norm because Σα = 1.
    let perron = op.sqrt_alpha.clone();
    let block = (ell + OVERSAMPLING).min(n - 1);

    let mut rng = ChaCha8Rng::seed_from_u64(INIT_SEED);
    let start = DMatrix::from_fn(n, block, |_, _| StandardNormal.sample(&mut rng));
    let mut deflated = start;
    deflate(&mut deflated, &perron);
    let mut q = orthonormalize(deflated, &perron);

    let mut best = f64::INFINITY;
    for _ in 0..max_power_iters.max(1) {
        let mut z = &rt * rt.tr_mul(&q);
        deflate(&mut z, &perron);
        let mut projected = q.tr_mul(&z);
        projected = (&projected + projected.transpose()) * 0.5;
        let eig = SymmetricEigen::new(projected);
        let mut order: Vec<usize> = (0..block).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
        let rotation = DMatrix::from_fn(block, block, |r, c| eig.eigenvectors[(r, order[c])]);
        let theta: Vec<f64> = order.iter().map(|&c| eig.eigenvalues[c]).collect();

        let ritz = &q * &rotation;
        let image = &z * &rotation;
        let residual = (0..ell)
            .map(|a| (image.column(a) - ritz.column(a) * theta[a]).norm())
            .fold(0.0, f64::max);
        best = best.min(residual);
        if residual <= tol {
            let mut leading = ritz.columns(0, ell).into_owned();
            deflate(&mut leading, &perron);
            let leading = gram_schmidt(leading);
            let rhos = theta[..ell].iter().map(|t| t.max(0.0).sqrt()).collect();
            let mut vectors = leading;
            for (i, mut row) in vectors.row_iter_mut().enumerate() {
                row /= perron[i];
            }
            return Ok(SpectralBasis {
                vectors,
                rhos,
                epsilon_built_at: op.problem.epsilon(),
                sqrt_alpha: perron,
            });
        }
        q = orthonormalize(image, &perron);
    }
    Err(Error::SpectralNotConverged {
        iterations: max_power_iters,
        best_residual: best,
    })
}

/// Modified Gram–Schmidt that keeps column order and orientation.
fn gram_schmidt(mut w: DMatrix<f64>) -> DMatrix<f64> {
    for a in 0..w.ncols() {
        for b in 0..a {
            let c = w.column(b).dot(&w.column(a));
            let prev = w.column(b).into_owned();
            w.column_mut(a).axpy(-c, &prev, 1.0);
        }
        let norm = w.column(a).norm();
        if norm > 0.0 {
            w.column_mut(a).scale_mut(1.0 / norm);
        }
    }
    w
}

/// Spectrum of `K_ε` near a solution, as plotted against `ε`.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectrumReport {
    pub epsilon: f64,
    /// `ρ₁ ≥ … ≥ ρ_k`.
    pub rhos: Vec<f64>,
    /// `ρ₁, -ρ₁, ρ₂, -ρ₂, …`
    pub eigenvalues_of_k: Vec<f64>,
    /// `(1 - ρ_a)/ε`, the smallest eigenvalues of `-∇²Q_ε`.
    pub hessian_eigs_low: Vec<f64>,
    /// `(1 + ρ_a)/ε`.
    pub hessian_eigs_high: Vec<f64>,
    /// Row `a`: f-block of the `+ρ_a` eigenvector; also the semi-dual Hessian eigenvector.
    pub vectors_f: Option<Vec<Vec<f64>>>,
    /// Row `a`: g-block of the `+ρ_a` eigenvector.
    pub vectors_g: Option<Vec<Vec<f64>>>,
}

impl SpectrumReport {
    pub fn k(&self) -> usize {
        self.rhos.len()
    }

    /// Eigenvector of `K_ε` for `sign · ρ_a`, normalized in `L²(α) ⊕ L²(β)`.
    ///
    /// The `-ρ` vector is the `+ρ` vector with its f-block negated.
    pub fn k_eigenvector(&self, a: usize, negative: bool) -> Option<(DVector<f64>, DVector<f64>)> {
        let f = self.vectors_f.as_ref()?.get(a)?;
        let g = self.vectors_g.as_ref()?.get(a)?;
        let sign = if negative { -1.0 } else { 1.0 };
        let s = std::f64::consts::FRAC_1_SQRT_2;
        Some((
            DVector::from_iterator(f.len(), f.iter().map(|x| sign * s * x)),
            DVector::from_iterator(g.len(), g.iter().map(|x| s * x)),
        ))
    }
}

pub fn spectrum_report(
    problem: &EotProblem,
    pots: &Potentials,
    k: usize,
    include_vectors: bool,
) -> Result<SpectrumReport> {
    spectrum_report_with(
        problem,
        pots,
        k,
        include_vectors,
        DEFAULT_EIGEN_TOL,
        default_max_power_iters(k),
    )
}

pub fn spectrum_report_with(
    problem: &EotProblem,
    pots: &Potentials,
    k: usize,
    include_vectors: bool,
    tol: f64,
    max_power_iters: usize,
) -> Result<SpectrumReport> {
    let limit = problem.n().min(problem.m()).saturating_sub(1);
    if k > limit {
        return Err(Error::InvalidArgument(format!(
            "k = {k} exceeds min(n, m) - 1 = {limit}"
        )));
    }
    let eps = problem.epsilon();
    if k == 0 {
        return Ok(SpectrumReport {
            epsilon: eps,
            rhos: vec![],
            eigenvalues_of_k: vec![],
            hessian_eigs_low: vec![],
            hessian_eigs_high: vec![],
            vectors_f: include_vectors.then(Vec::new),
            vectors_g: include_vectors.then(Vec::new),
        });
    }
    let op = build_operator(problem, pots);
    let basis = top_modes(&op, k, tol, max_power_iters)?;
    let rhos = basis.rhos().to_vec();
    let (vectors_f, vectors_g) = if include_vectors {
        let rt = op.symmetrized_block();
        let left = basis.symmetrized();
        let mut fs = Vec::with_capacity(k);
        let mut gs = Vec::with_capacity(k);
        for (a, rho) in rhos.iter().enumerate() {
            fs.push(basis.vectors().column(a).iter().copied().collect());
            let right = if *rho > 0.0 {
                rt.tr_mul(&left.column(a)) / *rho
            } else {
                DVector::zeros(op.m())
            };
            gs.push(
                right
                    .iter()
                    .zip(op.sqrt_beta.iter())
                    .map(|(z, sb)| z / sb)
                    .collect(),
            );
        }
        (Some(fs), Some(gs))
    } else {
        (None, None)
    };
    Ok(SpectrumReport {
        epsilon: eps,
        eigenvalues_of_k: rhos.iter().flat_map(|r| [*r, -*r]).collect(),
        hessian_eigs_low: rhos.iter().map(|r| (1.0 - r) / eps).collect(),
        hessian_eigs_high: rhos.iter().map(|r| (1.0 + r) / eps).collect(),
        rhos,
        vectors_f,
        vectors_g,
    })
}

/// `‖Π_A - Π_B‖_op` for the orthogonal projectors onto two equal-size bases.
pub fn projector_distance(a: &SpectralBasis, b: &SpectralBasis) -> Result<f64> {
    if a.dimension() != b.dimension() {
        return Err(Error::DimensionMismatch {
            what: "basis dimension",
            expected: a.dimension(),
            got: b.dimension(),
        });
    }
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch {
            what: "basis size",
            expected: a.len(),
            got: b.len(),
        });
    }
    let wa = a.symmetrized();
    let wb = b.symmetrized();
    // For equal ranks ‖Π_A - Π_B‖ = ‖(Id - Π_A) W_B‖.
    let outside = &wb - &wa * wa.tr_mul(&wb);
    Ok(outside.singular_values().max())
}
