//! Gaussian log-likelihood, microergodic and smooth-L1 penalties, and the
//! stage-one objective.

use std::sync::{Arc, Mutex};

use thiserror::Error;

use crate::data::SpatialDataset;
use crate::design::{Component, PenaltyConfig};
use crate::linalg::{build_pattern, factorize_with_rescue, CholeskyFactor, LinalgError, SparsePattern, SpdMatrix};
use crate::model::{Model, ModelError};

pub const LN_2PI: f64 = 1.837_877_066_409_345_3;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LikelihoodError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("covariance factorization failed: {0}")]
    Factorization(LinalgError),
}

impl From<LinalgError> for LikelihoodError {
    fn from(e: LinalgError) -> Self {
        LikelihoodError::Factorization(e)
    }
}

/// Which objective the optimizer maximizes.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ObjectiveKind {
    Loglik,
    Penalized,
    Stage1,
}

/// `-(n/2) log 2pi - logdet/2 - r' A^{-1} r / 2` for a factored `A`.
pub fn gaussian_loglik(factor: &CholeskyFactor, residual: &[f64]) -> f64 {
    let n = residual.len() as f64;
    -0.5 * (n * LN_2PI + factor.logdet() + factor.quad_form(residual))
}

fn softplus(y: f64) -> f64 {
    y.max(0.0) + (-y.abs()).exp().ln_1p()
}

/// `[log(1 + e^{kx}) + log(1 + e^{-kx})] / k`.
pub fn smooth_l1(x: f64, kappa: f64) -> f64 {
    (softplus(kappa * x) + softplus(-kappa * x)) / kappa
}

/// `n * lambda_r * sqrt(nu0) * rho0`.
pub fn microergodic_penalty(model: &Model, natural: &[f64], n: usize, lambda_r: f64) -> f64 {
    if lambda_r == 0.0 {
        return 0.0;
    }
    let (nu0, rho0) = model.baseline(natural);
    n as f64 * lambda_r * nu0.sqrt() * rho0
}

/// `n * (lambda_mu * sum p(beta_i) + lambda_sigma * sum p(vartheta_j))` over slopes.
pub fn lasso_penalty(model: &Model, natural: &[f64], n: usize, cfg: &PenaltyConfig) -> f64 {
    let mut mean = 0.0;
    let mut cov = 0.0;
    for (e, &v) in model.layout.entries().iter().zip(natural) {
        if e.is_intercept() {
            continue;
        }
        let p = smooth_l1(v, cfg.kappa);
        if e.component == Component::Mean {
            mean += p;
        } else {
            cov += p;
        }
    }
    let n = n as f64;
    let term = |lambda: f64, s: f64| if lambda == 0.0 { 0.0 } else { n * lambda * s };
    term(cfg.lambda_mu, mean) + term(cfg.lambda_sigma, cov)
}

fn residual(model: &Model, data: &SpatialDataset, natural: &[f64]) -> Vec<f64> {
    model.mean(natural, &data.sites).iter().zip(&data.response).map(|(m, z)| z - m).collect()
}

/// Dense log-likelihood.
pub fn loglik(model: &Model, data: &SpatialDataset, natural: &[f64]) -> Result<f64, LikelihoodError> {
    let sigma = SpdMatrix::Dense(model.covariance_dense(natural, &data.sites, true)?);
    Ok(gaussian_loglik(&sigma.cholesky()?, &residual(model, data, natural)))
}

/// Log-likelihood with the tapered covariance on `pattern`.
pub fn loglik_tapered(
    model: &Model,
    data: &SpatialDataset,
    natural: &[f64],
    pattern: &Arc<SparsePattern>,
) -> Result<f64, LikelihoodError> {
    let sigma = SpdMatrix::Sparse(model.covariance_tapered(natural, &data.sites, pattern, true)?);
    Ok(gaussian_loglik(&sigma.cholesky()?, &residual(model, data, natural)))
}

/// `loglik - n * lambda_r * sqrt(nu0) * rho0`.
pub fn penalized_loglik(model: &Model, data: &SpatialDataset, natural: &[f64], cfg: &PenaltyConfig) -> Result<f64, LikelihoodError> {
    Ok(loglik(model, data, natural)? - microergodic_penalty(model, natural, data.n(), cfg.lambda_r))
}

/// Penalized log-likelihood minus the smooth-L1 slope penalties.
pub fn stage1_objective(model: &Model, data: &SpatialDataset, natural: &[f64], cfg: &PenaltyConfig) -> Result<f64, LikelihoodError> {
    Ok(penalized_loglik(model, data, natural, cfg)? - lasso_penalty(model, natural, data.n(), cfg))
}

/// One objective evaluation with its parts.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Evaluation {
    pub loglik: f64,
    pub objective: f64,
    /// Diagonal jitter was needed to factor the covariance.
    pub jittered: bool,
}

struct CachedFactor {
    key: Vec<f64>,
    factor: Arc<CholeskyFactor>,
    jittered: bool,
}

const CACHE_SLOTS: usize = 2;

/// Objective over a fixed dataset; caches covariance factors keyed by the
/// covariance coefficients so that mean-only moves skip refactoring.
pub struct Likelihood<'a> {
    model: &'a Model,
    data: &'a SpatialDataset,
    pattern: Option<Arc<SparsePattern>>,
    penalties: PenaltyConfig,
    kind: ObjectiveKind,
    rescue: bool,
    cache: Mutex<Vec<CachedFactor>>,
}

impl<'a> Likelihood<'a> {
    /// Uses the tapered path iff the design is tapered.
    pub fn new(model: &'a Model, data: &'a SpatialDataset, kind: ObjectiveKind) -> Result<Self, LikelihoodError> {
        let pattern = if model.is_tapered() { Some(Arc::new(build_pattern(&data.sites.locations, &model.design.taper)?)) } else { None };
        Ok(Self::with_pattern(model, data, kind, pattern))
    }

    pub fn with_pattern(model: &'a Model, data: &'a SpatialDataset, kind: ObjectiveKind, pattern: Option<Arc<SparsePattern>>) -> Self {
        Self {
            model,
            data,
            pattern,
            penalties: model.design.penalties,
            kind,
            rescue: false,
            cache: Mutex::new(Vec::new()),
        }
    }

    /// Allow a one-off diagonal jitter when the covariance fails to factor.
    pub fn with_rescue(mut self, rescue: bool) -> Self {
        self.rescue = rescue;
        self
    }

    pub fn with_penalties(mut self, penalties: PenaltyConfig) -> Self {
        self.penalties = penalties;
        self
    }

    pub fn model(&self) -> &Model {
        self.model
    }

    pub fn data(&self) -> &SpatialDataset {
        self.data
    }

    pub fn pattern(&self) -> Option<&Arc<SparsePattern>> {
        self.pattern.as_ref()
    }

    pub fn kind(&self) -> ObjectiveKind {
        self.kind
    }

    pub fn penalties(&self) -> &PenaltyConfig {
        &self.penalties
    }

    fn key(&self, natural: &[f64]) -> Vec<f64> {
        natural[self.model.layout.range(Component::Mean).end..].to_vec()
    }

    /// Factor of the observation covariance at `natural`.
    pub fn factor(&self, natural: &[f64]) -> Result<(Arc<CholeskyFactor>, bool), LikelihoodError> {
        let key = self.key(natural);
        if let Some(hit) = self.cache.lock().unwrap().iter().find(|c| c.key == key) {
            return Ok((hit.factor.clone(), hit.jittered));
        }
        let mut sigma = self.model.covariance(natural, &self.data.sites, self.pattern.as_ref())?;
        let (factor, jittered) = factorize_with_rescue(&mut sigma, self.rescue)?;
        let factor = Arc::new(factor);
        let mut cache = self.cache.lock().unwrap();
        if cache.len() == CACHE_SLOTS {
            cache.remove(0);
        }
        cache.push(CachedFactor { key, factor: factor.clone(), jittered });
        Ok((factor, jittered))
    }

    pub fn evaluate(&self, natural: &[f64]) -> Result<Evaluation, LikelihoodError> {
        let (factor, jittered) = self.factor(natural)?;
        let ll = gaussian_loglik(&factor, &residual(self.model, self.data, natural));
        let n = self.data.n();
        let objective = match self.kind {
            ObjectiveKind::Loglik => ll,
            ObjectiveKind::Penalized => ll - microergodic_penalty(self.model, natural, n, self.penalties.lambda_r),
            ObjectiveKind::Stage1 => {
                ll - microergodic_penalty(self.model, natural, n, self.penalties.lambda_r)
                    - lasso_penalty(self.model, natural, n, &self.penalties)
            }
        };
        Ok(Evaluation { loglik: ll, objective, jittered })
    }
}
