//! Covariance kernels: Matérn correlation, the spatially varying parametric
//! functions, nonstationary covariance entries and compact-support tapers.

mod bessel;
mod cov;
mod local;
mod matern;
mod taper;

use thiserror::Error;

pub use bessel::{bessel_k, ln_bessel_k};
pub use cov::{cov_gr, cov_sparse, prefactor, q_distance, scalar_prefactor, ScalarKernel};
pub use local::{
    kernel_eigen, kernel_matrix, logistic, nu_fn, sigma_fn, AnisotropyCoefficients, KernelEigen, KernelShape,
    LocalKernel, SmoothnessBounds, Sym2, OMEGA_MARGIN,
};
pub use matern::{matern_correlation, matern_correlation_with, MaternConvention, NU_CEILING};
pub use taper::{taper_correlation, TaperFamily, TaperSpec};

pub(crate) use cov::{cov_gr_prepared, cov_sparse_unchecked, PreparedKernel};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum KernelError {
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("{0}")]
    Domain(String),
    #[error("singular kernel matrix")]
    Singular,
    #[error("degenerate kernel: tilt angle {0} too close to 0 or pi")]
    Degenerate(f64),
}
