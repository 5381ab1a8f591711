//! Initialization and the fit driver shared by every estimation stage.

use std::sync::atomic::{AtomicBool, Ordering};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::SpatialDataset;
use crate::design::{Component, ModelDesign};
use crate::likelihood::{Likelihood, LikelihoodError, ObjectiveKind};
use crate::linalg::{condition_estimate, LinalgError};
use crate::model::{Model, ModelError};
use crate::optimizer::{hessian_fd, maximize, standard_errors, OptimError, OptimOptions, OptimResult};
use crate::params::{COEF_BOUND, LOG_NUGGET_MAX, LOG_NUGGET_MIN};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FitError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Likelihood(#[from] LikelihoodError),
    #[error("{stage}: {source}")]
    Optimizer { stage: String, source: OptimError },
    #[error("final estimate does not factor without jitter: {0}")]
    FinalFactorization(LikelihoodError),
    #[error("free mask has length {got}, layout expects {expected}")]
    Mask { got: usize, expected: usize },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitOptions {
    pub optimizer: OptimOptions,
    /// Allow a one-off diagonal jitter during optimization.
    pub rescue: bool,
    pub standard_errors: bool,
    pub condition: bool,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self { optimizer: OptimOptions::default(), rescue: true, standard_errors: true, condition: true }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub labels: Vec<String>,
    /// Decoded estimates; pinned coordinates hold their fixed value.
    pub estimates: Vec<f64>,
    pub free: Vec<bool>,
    pub standard_errors: Option<Vec<f64>>,
    pub standard_error_note: Option<String>,
    pub loglik: f64,
    pub objective: f64,
    pub converged: bool,
    /// Jitter was needed at some point during optimization.
    pub jittered_during_optimization: bool,
    pub condition_estimate: Option<f64>,
    pub optim: OptimResult,
    pub wall_time: f64,
}

impl FitResult {
    pub fn dimension(&self) -> usize {
        self.free.iter().filter(|&&f| f).count()
    }
}

/// Pairwise-distance quantile (type 7) over all pairs.
pub fn distance_quantile(locations: &[[f64; 2]], q: f64) -> f64 {
    let n = locations.len();
    let mut d = Vec::with_capacity(n * n.saturating_sub(1) / 2);
    for j in 0..n {
        for i in 0..j {
            d.push((locations[i][0] - locations[j][0]).hypot(locations[i][1] - locations[j][1]));
        }
    }
    if d.is_empty() {
        return 1.0;
    }
    let pos = q * (d.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let (_, &mut a, rest) = d.select_nth_unstable_by(lo, f64::total_cmp);
    let b = if pos > lo as f64 { rest.iter().copied().fold(f64::INFINITY, f64::min) } else { a };
    a + (pos - lo as f64) * (b - a)
}

fn sample_variance(v: &[f64]) -> f64 {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    let s = v.iter().map(|x| (x - m).powi(2)).sum::<f64>();
    if v.len() > 1 { s / (n - 1.0) } else { 1.0 }
}

/// Starting values: mean coefficients by GLS under an exponential guess
/// (variance `var(z)`, scale the 20th-percentile distance), `alpha` from the
/// GLS residual variance, `theta_ms` at the log scale guess, every other
/// coefficient 0, nugget at 5% of the residual variance.
pub fn initial_values(model: &Model, data: &SpatialDataset) -> Result<Vec<f64>, FitError> {
    let layout = &model.layout;
    let var_z = sample_variance(&data.response).max(1e-12);
    let scale = distance_quantile(&data.sites.locations, 0.2).max(1e-12);

    let mut guess = ModelDesign::stationary(0.5);
    guess.mean = model.design.mean.clone();
    guess.taper = model.design.taper;
    guess.convention = model.design.convention;
    let names = data.covariate_names();
    let stationary = Model::new(guess, &names)?;
    let mut theta = vec![0.0; stationary.layout.len()];
    let p = stationary.layout.range(Component::Mean).len();
    theta[p] = var_z.ln();
    theta[p + 1] = scale.ln();
    let lik = Likelihood::new(&stationary, data, ObjectiveKind::Loglik)?.with_rescue(true);
    let (factor, _) = lik.factor(&theta)?;

    let x = stationary.mean_design(&data.sites);
    let mut sx = x.clone();
    factor.solve_mat(sx.as_mut());
    let sz = factor.solve(&data.response);
    let xtx = faer::Mat::<f64>::from_fn(p, p, |a, b| (0..data.n()).map(|i| x[(i, a)] * sx[(i, b)]).sum());
    let xtz: Vec<f64> = (0..p).map(|a| (0..data.n()).map(|i| x[(i, a)] * sz[i]).sum()).collect();
    let gram = crate::linalg::DenseSpd::from_lower_fn(p, |a, b| xtx[(a, b)]);
    let beta = gram.cholesky().map(|c| c.solve(&xtz)).map_err(|e| FitError::Likelihood(e.into()))?;

    let mut init = vec![0.0; layout.len()];
    for (k, b) in beta.iter().enumerate() {
        init[k] = b.clamp(-COEF_BOUND, COEF_BOUND);
    }
    let resid: Vec<f64> = (0..data.n()).map(|i| data.response[i] - (0..p).map(|k| x[(i, k)] * beta[k]).sum::<f64>()).collect();
    let var_r = sample_variance(&resid).max(1e-12);
    init[layout.range(Component::StdDev).start] = var_r.ln().clamp(-COEF_BOUND, COEF_BOUND);
    init[layout.range(Component::Scale).start] = scale.ln().clamp(-COEF_BOUND, COEF_BOUND);
    let nug = layout.range(Component::Nugget);
    if !nug.is_empty() {
        init[nug.start] = (0.05 * var_r).ln().clamp(LOG_NUGGET_MIN, LOG_NUGGET_MAX);
    }
    Ok(init)
}

/// Maximizes the objective over the `free` coordinates; pinned coordinates
/// keep their value from `start`.
pub fn fit(
    model: &Model,
    data: &SpatialDataset,
    kind: ObjectiveKind,
    free: &[bool],
    start: &[f64],
    options: &FitOptions,
    stage: &str,
) -> Result<FitResult, FitError> {
    let t0 = Instant::now();
    let layout = &model.layout;
    let p = layout.len();
    if free.len() != p {
        return Err(FitError::Mask { got: free.len(), expected: p });
    }
    model.check(start, &data.sites)?;
    let pairs = layout.pairs(Some(free));
    let base = layout.encode(start, &pairs);
    let (lo_all, hi_all) = layout.bounds(&pairs);
    let idx: Vec<usize> = (0..p).filter(|&i| free[i]).collect();
    let lower: Vec<f64> = idx.iter().map(|&i| lo_all[i]).collect();
    let upper: Vec<f64> = idx.iter().map(|&i| hi_all[i]).collect();
    let x0: Vec<f64> = idx.iter().map(|&i| base[i]).collect();
    let to_natural = |x: &[f64]| {
        let mut c = base.clone();
        for (k, &i) in idx.iter().enumerate() {
            c[i] = x[k];
        }
        layout.decode(&c, &pairs)
    };

    let lik = Likelihood::new(model, data, kind)?.with_rescue(options.rescue);
    let jittered = AtomicBool::new(false);
    let objective = |x: &[f64]| -> Result<f64, String> {
        let e = lik.evaluate(&to_natural(x)).map_err(|e| e.to_string())?;
        if e.jittered {
            jittered.store(true, Ordering::Relaxed);
        }
        Ok(e.objective)
    };
    let optim = maximize(&objective, &lower, &upper, &x0, &options.optimizer)
        .map_err(|source| FitError::Optimizer { stage: stage.to_string(), source })?;
    let estimates = to_natural(&optim.argmax);

    let exact = Likelihood::with_pattern(model, data, kind, lik.pattern().cloned());
    let final_eval = exact.evaluate(&estimates).map_err(FitError::FinalFactorization)?;

    let (mut ses, mut note) = (None, None);
    if options.standard_errors {
        if !optim.converged {
            note = Some(format!("optimizer stopped with {:?}; standard errors omitted", optim.termination));
        } else if idx.is_empty() {
            ses = Some(vec![f64::NAN; p]);
        } else {
            let nat_free: Vec<f64> = idx.iter().map(|&i| estimates[i]).collect();
            let natural_objective = |x: &[f64]| -> Result<f64, String> {
                let mut v = estimates.clone();
                for (k, &i) in idx.iter().enumerate() {
                    v[i] = x[k];
                }
                exact.evaluate(&v).map(|e| e.objective).map_err(|e| e.to_string())
            };
            match hessian_fd(&natural_objective, &nat_free).and_then(|h| standard_errors(&h)) {
                Ok(se) => {
                    let mut full = vec![f64::NAN; p];
                    for (k, &i) in idx.iter().enumerate() {
                        full[i] = se[k];
                    }
                    ses = Some(full);
                }
                Err(e) => note = Some(e),
            }
        }
    }
    let condition = if options.condition {
        let sigma = model.covariance(&estimates, &data.sites, exact.pattern()).map_err(LikelihoodError::from)?;
        Some(condition_estimate(&sigma).map_err(|e: LinalgError| FitError::FinalFactorization(e.into()))?)
    } else {
        None
    };
    Ok(FitResult {
        labels: layout.labels(),
        estimates,
        free: free.to_vec(),
        standard_errors: ses,
        standard_error_note: note,
        loglik: final_eval.loglik,
        objective: final_eval.objective,
        converged: optim.converged,
        jittered_during_optimization: jittered.load(Ordering::Relaxed),
        condition_estimate: condition,
        optim,
        wall_time: t0.elapsed().as_secs_f64(),
    })
}
