//! Dense and taper-sparse symmetric positive-definite linear algebra.

mod condition;
mod dense;
mod sparse;

use thiserror::Error;

pub use condition::{condition_estimate, largest_eigenvalue};
pub use dense::{DenseCholesky, DenseSpd};
pub use sparse::{build_pattern, SparseCholesky, SparsePattern, SparseSpd};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LinalgError {
    #[error("matrix is not positive definite (failing pivot {pivot})")]
    Indefinite { pivot: usize },
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("non-finite {0}")]
    NonFinite(String),
}

/// Relative size of the one-off diagonal jitter used by [`factorize_with_rescue`].
pub const JITTER_FACTOR: f64 = 1e-8;

/// A covariance matrix in dense or tapered storage.
#[derive(Clone, Debug)]
pub enum SpdMatrix {
    Dense(DenseSpd),
    Sparse(SparseSpd),
}

impl SpdMatrix {
    pub fn n(&self) -> usize {
        match self {
            SpdMatrix::Dense(a) => a.n(),
            SpdMatrix::Sparse(a) => a.n(),
        }
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        match self {
            SpdMatrix::Dense(a) => a.get(i, j),
            SpdMatrix::Sparse(a) => a.get(i, j),
        }
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        match self {
            SpdMatrix::Dense(a) => a.matvec(x),
            SpdMatrix::Sparse(a) => a.matvec(x),
        }
    }

    pub fn add_diagonal(&mut self, eps: f64) {
        match self {
            SpdMatrix::Dense(a) => a.add_diagonal(eps),
            SpdMatrix::Sparse(a) => a.add_diagonal(eps),
        }
    }

    pub fn mean_diagonal(&self) -> f64 {
        match self {
            SpdMatrix::Dense(a) => a.mean_diagonal(),
            SpdMatrix::Sparse(a) => a.mean_diagonal(),
        }
    }

    pub fn cholesky(&self) -> Result<CholeskyFactor, LinalgError> {
        Ok(match self {
            SpdMatrix::Dense(a) => CholeskyFactor::Dense(a.cholesky()?),
            SpdMatrix::Sparse(a) => CholeskyFactor::Sparse(a.cholesky()?),
        })
    }
}

#[derive(Clone, Debug)]
pub enum CholeskyFactor {
    Dense(DenseCholesky),
    Sparse(SparseCholesky),
}

impl CholeskyFactor {
    pub fn logdet(&self) -> f64 {
        match self {
            CholeskyFactor::Dense(f) => f.logdet(),
            CholeskyFactor::Sparse(f) => f.logdet(),
        }
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        match self {
            CholeskyFactor::Dense(f) => f.solve(b),
            CholeskyFactor::Sparse(f) => f.solve(b),
        }
    }

    pub fn solve_mat(&self, b: faer::MatMut<'_, f64>) {
        match self {
            CholeskyFactor::Dense(f) => f.solve_mat(b),
            CholeskyFactor::Sparse(f) => f.solve_mat(b),
        }
    }

    /// `r^T A^{-1} r`.
    pub fn quad_form(&self, r: &[f64]) -> f64 {
        match self {
            CholeskyFactor::Dense(f) => f.solve_lower(r).iter().map(|u| u * u).sum(),
            CholeskyFactor::Sparse(f) => f.solve(r).iter().zip(r).map(|(a, b)| a * b).sum(),
        }
    }
}

/// Factors `matrix`; when `rescue` is set and the first attempt fails, adds
/// `JITTER_FACTOR * mean(diag)` to the diagonal and retries once. Returns the
/// factor and whether jitter was applied.
pub fn factorize_with_rescue(matrix: &mut SpdMatrix, rescue: bool) -> Result<(CholeskyFactor, bool), LinalgError> {
    match matrix.cholesky() {
        Ok(f) => Ok((f, false)),
        Err(LinalgError::Indefinite { .. }) if rescue => {
            let eps = JITTER_FACTOR * matrix.mean_diagonal();
            matrix.add_diagonal(eps);
            matrix.cholesky().map(|f| (f, true))
        }
        Err(e) => Err(e),
    }
}
