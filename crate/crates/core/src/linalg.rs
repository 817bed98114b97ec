//! Dense complex Hermitian linear algebra.
//!
//! Everything here works on small dense matrices (a few hundred rows at most):
//! Cholesky factorization, Hermitian eigendecomposition and the generalized
//! eigenvalue decomposition of a Hermitian-definite pencil `{A, B}`.
//!
//! The GEVD uses the normalization `Xᴴ·B·X = I`, and additionally returns
//! `Q = X⁻ᴴ` so that `A = Q·Σ·Qᴴ` and `B = Q·Qᴴ`.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use num_complex::Complex64;
use thiserror::Error;

pub type CMatrix = DMatrix<Complex64>;
pub type CVector = DVector<Complex64>;

const EIG_MAX_ITER: usize = 10_000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LinalgError {
    #[error("matrix is not positive definite (pivot {pivot:e} at index {index})")]
    NotPositiveDefinite { index: usize, pivot: f64 },
    #[error("Hermitian eigenvalue iteration did not converge")]
    ConvergenceFailure,
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("matrix is not square ({rows}x{cols})")]
    NotSquare { rows: usize, cols: usize },
}

/// Square complex matrix that is Hermitian by construction.
#[derive(Clone, Debug, PartialEq)]
pub struct HermitianMatrix(CMatrix);

impl HermitianMatrix {
    /// Builds `(M + Mᴴ)/2`. The result is exactly Hermitian with a real diagonal.
    pub fn symmetrize(m: CMatrix) -> Result<Self, LinalgError> {
        if m.nrows() != m.ncols() {
            return Err(LinalgError::NotSquare {
                rows: m.nrows(),
                cols: m.ncols(),
            });
        }
        let n = m.nrows();
        let mut out = CMatrix::zeros(n, n);
        for j in 0..n {
            for i in 0..n {
                out[(i, j)] = (m[(i, j)] + m[(j, i)].conj()) * 0.5;
            }
        }
        Ok(Self(out))
    }

    pub fn zeros(dim: usize) -> Self {
        Self(CMatrix::zeros(dim, dim))
    }

    pub fn identity(dim: usize) -> Self {
        Self(CMatrix::identity(dim, dim))
    }

    pub fn from_real_diagonal(diag: &[f64]) -> Self {
        let n = diag.len();
        Self(CMatrix::from_fn(n, n, |i, j| {
            if i == j {
                Complex64::new(diag[i], 0.0)
            } else {
                Complex64::new(0.0, 0.0)
            }
        }))
    }

    /// Rank-one matrix `v·vᴴ`.
    pub fn outer(v: &CVector) -> Self {
        let n = v.len();
        let mut m = CMatrix::zeros(n, n);
        for j in 0..n {
            let cj = v[j].conj();
            for i in 0..n {
                m[(i, j)] = v[i] * cj;
            }
        }
        Self(m)
    }

    /// `Q·diag(w)·Qᴴ` for real weights `w`.
    pub fn from_weighted_columns(q: &CMatrix, weights: &[f64]) -> Self {
        assert_eq!(q.ncols(), weights.len());
        let mut scaled = q.clone();
        for (c, &w) in weights.iter().enumerate() {
            scaled.column_mut(c).scale_mut(w);
        }
        Self::symmetrize(&scaled * q.adjoint()).expect("Q·Qᴴ is square")
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn as_matrix(&self) -> &CMatrix {
        &self.0
    }

    pub fn into_matrix(self) -> CMatrix {
        self.0
    }

    pub fn trace(&self) -> f64 {
        (0..self.dim()).map(|i| self.0[(i, i)].re).sum()
    }

    pub fn max_diagonal(&self) -> f64 {
        (0..self.dim())
            .map(|i| self.0[(i, i)].re)
            .fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.0.norm()
    }

    pub fn scaled(&self, s: f64) -> Self {
        Self(self.0.scale(s))
    }

    /// `self += s·other`
    pub fn add_scaled(&mut self, s: f64, other: &HermitianMatrix) {
        assert_eq!(self.dim(), other.dim());
        self.0.zip_apply(&other.0, |a, b| *a += b * s);
    }

    pub fn add_diagonal(&mut self, value: f64) {
        for i in 0..self.dim() {
            self.0[(i, i)].re += value;
        }
    }

    /// Adds `factor·(tr/N)·I`.
    pub fn with_loading(&self, factor: f64) -> Self {
        let mut out = self.clone();
        if factor != 0.0 && self.dim() > 0 {
            out.add_diagonal(factor * self.trace() / self.dim() as f64);
        }
        out
    }

    /// Congruence transform `T·H·Tᴴ`.
    pub fn congruence(&self, t: &CMatrix) -> Self {
        Self::symmetrize(t * &self.0 * t.adjoint()).expect("congruence of square matrix")
    }

    /// `vᴴ·H·v`, real for Hermitian `H`.
    pub fn quadratic_form(&self, v: &CVector) -> f64 {
        v.dotc(&(&self.0 * v)).re
    }
}

impl std::ops::Add for &HermitianMatrix {
    type Output = HermitianMatrix;
    fn add(self, rhs: &HermitianMatrix) -> HermitianMatrix {
        HermitianMatrix(&self.0 + &rhs.0)
    }
}

impl std::ops::Sub for &HermitianMatrix {
    type Output = HermitianMatrix;
    fn sub(self, rhs: &HermitianMatrix) -> HermitianMatrix {
        HermitianMatrix(&self.0 - &rhs.0)
    }
}

/// Lower-triangular Cholesky factor `L` with `L·Lᴴ = H`.
#[derive(Clone, Debug)]
pub struct CholeskyFactor {
    lower: CMatrix,
}

impl CholeskyFactor {
    pub fn lower(&self) -> &CMatrix {
        &self.lower
    }

    pub fn into_lower(self) -> CMatrix {
        self.lower
    }

    /// `L⁻¹·M`
    pub fn solve_lower(&self, m: &CMatrix) -> CMatrix {
        self.lower
            .solve_lower_triangular(m)
            .expect("Cholesky factor has a positive diagonal")
    }

    /// `L⁻ᴴ·M`
    pub fn solve_upper(&self, m: &CMatrix) -> CMatrix {
        self.lower
            .adjoint()
            .solve_upper_triangular(m)
            .expect("Cholesky factor has a positive diagonal")
    }

    /// `H⁻¹·M`
    pub fn solve(&self, m: &CMatrix) -> CMatrix {
        self.solve_upper(&self.solve_lower(m))
    }
}

/// Cholesky factorization of a Hermitian positive-definite matrix.
///
/// A pivot at or below `dim·ε·max_diag` is reported as
/// [`LinalgError::NotPositiveDefinite`]; the caller is expected to regularize.
pub fn cholesky(h: &HermitianMatrix) -> Result<CholeskyFactor, LinalgError> {
    let n = h.dim();
    let a = h.as_matrix();
    let threshold = (n as f64 * f64::EPSILON * h.max_diagonal()).max(0.0);
    let mut l = CMatrix::zeros(n, n);
    for j in 0..n {
        let mut d = a[(j, j)].re;
        for k in 0..j {
            d -= l[(j, k)].norm_sqr();
        }
        if !(d > threshold) {
            return Err(LinalgError::NotPositiveDefinite { index: j, pivot: d });
        }
        let djj = d.sqrt();
        l[(j, j)] = Complex64::new(djj, 0.0);
        for i in (j + 1)..n {
            let mut s = a[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)].conj();
            }
            l[(i, j)] = s / djj;
        }
    }
    Ok(CholeskyFactor { lower: l })
}

/// Eigendecomposition `H = V·diag(λ)·Vᴴ` with `λ` sorted descending.
#[derive(Clone, Debug)]
pub struct HermitianEig {
    pub eigenvalues: Vec<f64>,
    pub eigenvectors: CMatrix,
}

pub fn hermitian_eig(h: &HermitianMatrix) -> Result<HermitianEig, LinalgError> {
    let n = h.dim();
    if n == 0 {
        return Ok(HermitianEig {
            eigenvalues: Vec::new(),
            eigenvectors: CMatrix::zeros(0, 0),
        });
    }
    let eig = SymmetricEigen::try_new(h.as_matrix().clone(), f64::EPSILON, EIG_MAX_ITER)
        .ok_or(LinalgError::ConvergenceFailure)?;
    let mut order: Vec<usize> = (0..n).collect();
    // stable sort keeps the solver's order among ties
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let eigenvalues = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let eigenvectors = CMatrix::from_fn(n, n, |r, c| eig.eigenvectors[(r, order[c])]);
    Ok(HermitianEig {
        eigenvalues,
        eigenvectors,
    })
}

/// Generalized eigendecomposition of the pencil `{A, B}`.
#[derive(Clone, Debug)]
pub struct GevdResult {
    /// Generalized eigenvalues, descending.
    pub eigenvalues: Vec<f64>,
    /// Generalized eigenvectors as columns, normalized so that `Xᴴ·B·X = I`.
    pub x: CMatrix,
    /// `Q = X⁻ᴴ`, so `A = Q·Σ·Qᴴ` and `B = Q·Qᴴ`.
    pub q: CMatrix,
}

impl GevdResult {
    pub fn dim(&self) -> usize {
        self.eigenvalues.len()
    }
}

/// GEVD of a Hermitian-definite pencil via Cholesky whitening of `B`.
pub fn gevd(a: &HermitianMatrix, b: &HermitianMatrix) -> Result<GevdResult, LinalgError> {
    if a.dim() != b.dim() {
        return Err(LinalgError::DimensionMismatch {
            expected: b.dim(),
            found: a.dim(),
        });
    }
    let chol = cholesky(b)?;
    let half = chol.solve_lower(a.as_matrix());
    let whitened = HermitianMatrix::symmetrize(chol.solve_lower(&half.adjoint()))?;
    let eig = hermitian_eig(&whitened)?;
    let x = chol.solve_upper(&eig.eigenvectors);
    let q = chol.lower() * &eig.eigenvectors;
    Ok(GevdResult {
        eigenvalues: eig.eigenvalues,
        x,
        q,
    })
}

/// `H⁻¹·M` for Hermitian positive-definite `H`.
pub fn solve_hermitian(h: &HermitianMatrix, m: &CMatrix) -> Result<CMatrix, LinalgError> {
    if m.nrows() != h.dim() {
        return Err(LinalgError::DimensionMismatch {
            expected: h.dim(),
            found: m.nrows(),
        });
    }
    Ok(cholesky(h)?.solve(m))
}

/// Frobenius norm of `A − B` divided by that of `B` (or the raw difference when `B = 0`).
pub fn relative_error(a: &CMatrix, b: &CMatrix) -> f64 {
    let diff = (a - b).norm();
    let base = b.norm();
    if base > 0.0 {
        diff / base
    } else {
        diff
    }
}

#[cfg(test)]
pub(crate) mod testing {
    use super::*;
    use rand::Rng;
    use rand_distr::StandardNormal;

    pub fn random_matrix<R: Rng>(rng: &mut R, rows: usize, cols: usize) -> CMatrix {
        CMatrix::from_fn(rows, cols, |_, _| {
            Complex64::new(rng.sample(StandardNormal), rng.sample(StandardNormal))
        })
    }

    /// `G·Gᴴ + shift·I`, well conditioned for moderate shifts.
    pub fn random_pd<R: Rng>(rng: &mut R, n: usize, shift: f64) -> HermitianMatrix {
        let g = random_matrix(rng, n, n);
        let mut h = HermitianMatrix::symmetrize(&g * g.adjoint()).unwrap();
        h.add_diagonal(shift * n as f64);
        h
    }

    pub fn random_hermitian<R: Rng>(rng: &mut R, n: usize) -> HermitianMatrix {
        HermitianMatrix::symmetrize(random_matrix(rng, n, n)).unwrap()
    }
}
