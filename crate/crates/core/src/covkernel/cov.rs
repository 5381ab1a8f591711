//! Nonstationary covariance entries built from pairs of local kernels.

use super::local::{LocalKernel, Sym2};
use super::matern::{check_nu, matern_at, MaternConvention};
use super::KernelError;

/// `|Si|^{1/4} |Sj|^{1/4} / |(Si + Sj)/2|^{1/2}`, always in `(0, 1]`.
pub fn prefactor(si: &Sym2, sj: &Sym2) -> Result<f64, KernelError> {
    let (di, dj) = (si.det(), sj.det());
    if !si.is_positive_definite() || !sj.is_positive_definite() {
        return Err(KernelError::Singular);
    }
    let avg = si.average(sj).det();
    Ok((di * dj).sqrt().sqrt() / avg.sqrt())
}

/// `ds^T ((Si + Sj)/2)^{-1} ds`.
pub fn q_distance(s_i: [f64; 2], s_j: [f64; 2], si: &Sym2, sj: &Sym2) -> Result<f64, KernelError> {
    let avg = si.average(sj);
    let det = avg.det();
    if !(det > 0.0 && avg.xx > 0.0) || !det.is_finite() {
        return Err(KernelError::Singular);
    }
    let (dx, dy) = (s_i[0] - s_j[0], s_i[1] - s_j[1]);
    Ok(avg.inverse_quad(det, dx, dy).max(0.0))
}

/// Modular nonstationary covariance between two sites.
pub fn cov_gr(
    s_i: [f64; 2],
    s_j: [f64; 2],
    ki: &LocalKernel,
    kj: &LocalKernel,
    convention: MaternConvention,
) -> Result<f64, KernelError> {
    let pre = prefactor(&ki.sigma_matrix, &kj.sigma_matrix)?;
    let q = q_distance(s_i, s_j, &ki.sigma_matrix, &kj.sigma_matrix)?;
    check_nu(ki.nu)?;
    check_nu(kj.nu)?;
    let nu = (ki.nu * kj.nu).sqrt();
    let value = ki.sigma * kj.sigma * pre * matern_at(convention.argument(q.sqrt(), 1.0, nu), nu);
    if value.is_finite() {
        Ok(value)
    } else {
        Err(KernelError::NonFinite("covariance entry"))
    }
}

/// Isotropic local kernel `(sigma, rho, nu)` where the kernel matrix is `rho I`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ScalarKernel {
    pub sigma: f64,
    pub rho: f64,
    pub nu: f64,
}

/// Isotropic specialization of [`cov_gr`] with kernel matrices `rho I`:
/// `sigma_i sigma_j 2 sqrt(rho_i rho_j)/(rho_i + rho_j) M(h / sqrt((rho_i + rho_j)/2))`.
pub fn cov_sparse(h: f64, ki: &ScalarKernel, kj: &ScalarKernel, convention: MaternConvention) -> Result<f64, KernelError> {
    if !(ki.rho > 0.0 && kj.rho > 0.0) {
        return Err(KernelError::Domain("scalar kernel scale must be positive".into()));
    }
    if !(h >= 0.0) {
        return Err(KernelError::Domain(format!("distance must be nonnegative, got {h}")));
    }
    check_nu(ki.nu)?;
    check_nu(kj.nu)?;
    Ok(cov_sparse_unchecked(h, ki, kj, convention))
}

#[inline]
pub(crate) fn cov_sparse_unchecked(h: f64, ki: &ScalarKernel, kj: &ScalarKernel, convention: MaternConvention) -> f64 {
    let sum = ki.rho + kj.rho;
    let pre = 2.0 * (ki.rho * kj.rho).sqrt() / sum;
    let nu = (ki.nu * kj.nu).sqrt();
    let dist = h / (0.5 * sum).sqrt();
    ki.sigma * kj.sigma * pre * matern_at(convention.argument(dist, 1.0, nu), nu)
}

/// Isotropic-form prefactor `2 sqrt(rho_i rho_j) / (rho_i + rho_j)`.
pub fn scalar_prefactor(rho_i: f64, rho_j: f64) -> f64 {
    2.0 * (rho_i * rho_j).sqrt() / (rho_i + rho_j)
}

/// Per-location quantities reused across all pairs during assembly.
#[derive(Clone, Copy, Debug)]
pub(crate) struct PreparedKernel {
    pub sigma: f64,
    pub matrix: Sym2,
    pub det_quarter: f64,
    pub nu: f64,
}

impl PreparedKernel {
    pub fn new(k: &LocalKernel) -> Self {
        Self {
            sigma: k.sigma,
            matrix: k.sigma_matrix,
            det_quarter: k.sigma_matrix.det().sqrt().sqrt(),
            nu: k.nu,
        }
    }
}

#[inline]
pub(crate) fn cov_gr_prepared(
    s_i: [f64; 2],
    s_j: [f64; 2],
    ki: &PreparedKernel,
    kj: &PreparedKernel,
    convention: MaternConvention,
) -> f64 {
    let avg = ki.matrix.average(&kj.matrix);
    let det = avg.det();
    let pre = ki.det_quarter * kj.det_quarter / det.sqrt();
    let (dx, dy) = (s_i[0] - s_j[0], s_i[1] - s_j[1]);
    let q = avg.inverse_quad(det, dx, dy).max(0.0);
    let nu = if ki.nu == kj.nu { ki.nu } else { (ki.nu * kj.nu).sqrt() };
    ki.sigma * kj.sigma * pre * matern_at(convention.argument(q.sqrt(), 1.0, nu), nu)
}
