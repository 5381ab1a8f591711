//! Covariance and mean assembly for a design with decoded (natural) parameters.

use std::f64::consts::PI;
use std::sync::Arc;

use faer::Mat;
use rayon::prelude::*;
use thiserror::Error;

use crate::covkernel::{
    cov_gr_prepared, cov_sparse_unchecked, logistic, KernelError, KernelShape, LocalKernel, PreparedKernel,
    ScalarKernel, Sym2, OMEGA_MARGIN,
};
use crate::data::Sites;
use crate::design::{Component, DesignError, ModelDesign};
use crate::linalg::{DenseSpd, LinalgError, SparsePattern, SparseSpd, SpdMatrix};
use crate::params::ParameterLayout;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error(transparent)]
    Design(#[from] DesignError),
    #[error("site {site}: {source}")]
    Kernel { site: usize, source: KernelError },
    #[error("non-finite covariance entry at ({0}, {1})")]
    NonFiniteEntry(usize, usize),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error("parameter vector has length {got}, layout expects {expected}")]
    Length { got: usize, expected: usize },
    #[error("sites carry {got} covariate columns, the model was built for {expected}")]
    Covariates { got: usize, expected: usize },
}

/// A validated design bound to a dataset's covariate columns.
#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub design: ModelDesign,
    pub layout: ParameterLayout,
    n_covariates: usize,
}

impl Model {
    pub fn new(design: ModelDesign, covariate_names: &[String]) -> Result<Self, ModelError> {
        let layout = ParameterLayout::new(&design, covariate_names)?;
        Ok(Self { design, layout, n_covariates: covariate_names.len() })
    }

    pub fn is_tapered(&self) -> bool {
        self.design.is_tapered()
    }

    fn is_isotropic(&self) -> bool {
        self.design.aniso.is_none() && self.design.tilt.is_none()
    }

    pub fn check(&self, natural: &[f64], sites: &Sites) -> Result<(), ModelError> {
        if natural.len() != self.layout.len() {
            return Err(ModelError::Length { got: natural.len(), expected: self.layout.len() });
        }
        if sites.covariates.len() != self.n_covariates {
            return Err(ModelError::Covariates { got: sites.covariates.len(), expected: self.n_covariates });
        }
        Ok(())
    }

    /// Linear predictor of `component` at site `i`; 0 when the component is absent.
    #[inline]
    pub fn linear(&self, natural: &[f64], component: Component, sites: &Sites, i: usize) -> f64 {
        self.layout.range(component).map(|k| match self.layout.entries()[k].covariate {
            None => natural[k],
            Some(c) => natural[k] * sites.covariates[c][i],
        }).sum()
    }

    pub fn mean(&self, natural: &[f64], sites: &Sites) -> Vec<f64> {
        (0..sites.n()).map(|i| self.linear(natural, Component::Mean, sites, i)).collect()
    }

    /// Mean design matrix `n x p` (intercept first).
    pub fn mean_design(&self, sites: &Sites) -> Mat<f64> {
        let r = self.layout.range(Component::Mean);
        let entries = &self.layout.entries()[r];
        Mat::from_fn(sites.n(), entries.len(), |i, k| match entries[k].covariate {
            None => 1.0,
            Some(c) => sites.covariates[c][i],
        })
    }

    pub fn nugget_variance(&self, natural: &[f64]) -> f64 {
        let r = self.layout.range(Component::Nugget);
        if r.is_empty() {
            0.0
        } else {
            natural[r.start].exp()
        }
    }

    /// `(nu0, rho0)` at standardized covariates equal to zero.
    pub fn baseline(&self, natural: &[f64]) -> (f64, f64) {
        let b = self.design.smoothness;
        let xi = self.layout.range(Component::Smooth);
        let nu0 = if xi.is_empty() { b.nu_min } else { b.nu_from_linear(natural[xi.start]) };
        let rho0 = natural[self.layout.range(Component::Scale).start].exp();
        (nu0, rho0)
    }

    fn nu_at(&self, natural: &[f64], sites: &Sites, i: usize) -> f64 {
        let b = self.design.smoothness;
        if b.is_fixed() {
            b.nu_min
        } else {
            b.nu_from_linear(self.linear(natural, Component::Smooth, sites, i))
        }
    }

    pub fn sigma_at(&self, natural: &[f64], sites: &Sites, i: usize) -> f64 {
        (0.5 * self.linear(natural, Component::StdDev, sites, i)).exp()
    }

    /// Per-site `(rho, r, omega)`; the tilt is clamped away from 0 and pi.
    pub fn shape_at(&self, natural: &[f64], sites: &Sites, i: usize) -> KernelShape {
        let rho = self.linear(natural, Component::Scale, sites, i).exp();
        let r = if self.design.aniso.is_some() { self.linear(natural, Component::Aniso, sites, i).exp() } else { 1.0 };
        let omega = if self.design.tilt.is_some() {
            (logistic(self.linear(natural, Component::Tilt, sites, i)) * PI).clamp(OMEGA_MARGIN * PI, (1.0 - OMEGA_MARGIN) * PI)
        } else {
            PI / 2.0
        };
        KernelShape { rho, r, omega }
    }

    pub fn local_kernels(&self, natural: &[f64], sites: &Sites) -> Result<Vec<LocalKernel>, ModelError> {
        self.check(natural, sites)?;
        (0..sites.n())
            .map(|i| {
                let shape = self.shape_at(natural, sites, i);
                let matrix = if self.is_isotropic() { Sym2::scaled_identity(shape.rho * shape.rho) } else { shape.matrix() };
                LocalKernel::new(self.sigma_at(natural, sites, i), matrix, self.nu_at(natural, sites, i))
                    .map_err(|source| ModelError::Kernel { site: i, source })
            })
            .collect()
    }

    /// Isotropic kernels with `Sigma = rho I`, `rho = exp(2 x'theta_ms)`.
    pub fn scalar_kernels(&self, natural: &[f64], sites: &Sites) -> Result<Vec<ScalarKernel>, ModelError> {
        self.check(natural, sites)?;
        (0..sites.n())
            .map(|i| {
                let k = ScalarKernel {
                    sigma: self.sigma_at(natural, sites, i),
                    rho: (2.0 * self.linear(natural, Component::Scale, sites, i)).exp(),
                    nu: self.nu_at(natural, sites, i),
                };
                if !(k.sigma.is_finite() && k.sigma > 0.0 && k.rho.is_finite() && k.rho > 0.0) {
                    return Err(ModelError::Kernel { site: i, source: KernelError::NonFinite("scalar kernel") });
                }
                Ok(k)
            })
            .collect()
    }

    fn prepared(&self, natural: &[f64], sites: &Sites) -> Result<Vec<PreparedKernel>, ModelError> {
        Ok(self.local_kernels(natural, sites)?.iter().map(PreparedKernel::new).collect())
    }

    /// Dense covariance of the latent process, plus the nugget when requested.
    pub fn covariance_dense(&self, natural: &[f64], sites: &Sites, with_nugget: bool) -> Result<DenseSpd, ModelError> {
        let kernels = self.prepared(natural, sites)?;
        let n = sites.n();
        let conv = self.design.convention;
        let locs = &sites.locations;
        let columns: Vec<Vec<f64>> = (0..n)
            .into_par_iter()
            .with_min_len(8)
            .map(|j| (j..n).map(|i| cov_gr_prepared(locs[i], locs[j], &kernels[i], &kernels[j], conv)).collect())
            .collect();
        for (j, col) in columns.iter().enumerate() {
            if let Some(k) = col.iter().position(|v| !v.is_finite()) {
                return Err(ModelError::NonFiniteEntry(j + k, j));
            }
        }
        let nugget = if with_nugget { self.nugget_variance(natural) } else { 0.0 };
        Ok(DenseSpd::from_lower_fn(n, |i, j| columns[j][i - j] + if i == j { nugget } else { 0.0 }))
    }

    /// Tapered covariance on `pattern`, plus the nugget when requested.
    pub fn covariance_tapered(
        &self,
        natural: &[f64],
        sites: &Sites,
        pattern: &Arc<SparsePattern>,
        with_nugget: bool,
    ) -> Result<SparseSpd, ModelError> {
        if !self.is_isotropic() {
            return Err(DesignError::TaperedAnisotropy.into());
        }
        let kernels = self.scalar_kernels(natural, sites)?;
        let n = sites.n();
        if pattern.n() != n {
            return Err(LinalgError::Dimension(format!("pattern has {} sites, data has {n}", pattern.n())).into());
        }
        let conv = self.design.convention;
        let taper = self.design.taper;
        let nugget = if with_nugget { self.nugget_variance(natural) } else { 0.0 };
        let (col_ptr, row_idx, dist) = (pattern.col_ptr(), pattern.row_idx(), pattern.distances());
        let columns: Vec<Vec<f64>> = (0..n)
            .into_par_iter()
            .with_min_len(16)
            .map(|j| {
                (col_ptr[j]..col_ptr[j + 1])
                    .map(|k| {
                        let i = row_idx[k];
                        let h = dist[k];
                        let v = cov_sparse_unchecked(h, &kernels[i], &kernels[j], conv) * taper.eval(h);
                        if i == j { v + nugget } else { v }
                    })
                    .collect()
            })
            .collect();
        let mut values = Vec::with_capacity(pattern.nnz());
        for (j, col) in columns.into_iter().enumerate() {
            if let Some(k) = col.iter().position(|v| !v.is_finite()) {
                return Err(ModelError::NonFiniteEntry(row_idx[col_ptr[j] + k], j));
            }
            values.extend(col);
        }
        Ok(SparseSpd::new(pattern.clone(), values)?)
    }

    /// Covariance of the observations, tapered when a pattern is supplied.
    pub fn covariance(
        &self,
        natural: &[f64],
        sites: &Sites,
        pattern: Option<&Arc<SparsePattern>>,
    ) -> Result<SpdMatrix, ModelError> {
        Ok(match pattern {
            Some(p) => SpdMatrix::Sparse(self.covariance_tapered(natural, sites, p, true)?),
            None => SpdMatrix::Dense(self.covariance_dense(natural, sites, true)?),
        })
    }

    /// Cross-covariance `m x n` between new sites and training sites, tapered
    /// when `tapered` is set.
    pub fn cross_covariance(&self, natural: &[f64], new: &Sites, train: &Sites, tapered: bool) -> Result<Mat<f64>, ModelError> {
        let (m, n) = (new.n(), train.n());
        let conv = self.design.convention;
        let rows: Vec<Vec<f64>> = if tapered {
            if !self.is_isotropic() {
                return Err(DesignError::TaperedAnisotropy.into());
            }
            let kn = self.scalar_kernels(natural, new)?;
            let kt = self.scalar_kernels(natural, train)?;
            let taper = self.design.taper;
            let radius = taper.radius();
            (0..m)
                .into_par_iter()
                .map(|p| {
                    let a = new.locations[p];
                    (0..n)
                        .map(|i| {
                            let b = train.locations[i];
                            let h = (a[0] - b[0]).hypot(a[1] - b[1]);
                            if h >= radius {
                                0.0
                            } else {
                                cov_sparse_unchecked(h, &kn[p], &kt[i], conv) * taper.eval(h)
                            }
                        })
                        .collect()
                })
                .collect()
        } else {
            let kn = self.prepared(natural, new)?;
            let kt = self.prepared(natural, train)?;
            (0..m)
                .into_par_iter()
                .map(|p| (0..n).map(|i| cov_gr_prepared(new.locations[p], train.locations[i], &kn[p], &kt[i], conv)).collect())
                .collect()
        };
        for (p, row) in rows.iter().enumerate() {
            if let Some(i) = row.iter().position(|v| !v.is_finite()) {
                return Err(ModelError::NonFiniteEntry(p, i));
            }
        }
        Ok(Mat::from_fn(m, n, |p, i| rows[p][i]))
    }

    /// Marginal variances `sigma^2(s)` of the latent process.
    pub fn marginal_variance(&self, natural: &[f64], sites: &Sites) -> Vec<f64> {
        (0..sites.n()).map(|i| self.sigma_at(natural, sites, i).powi(2)).collect()
    }
}
