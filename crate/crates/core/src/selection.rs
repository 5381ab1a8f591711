//! Two-stage penalized estimation with thresholding and the hyperparameter
//! grid search.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::SpatialDataset;
use crate::design::{ModelDesign, PenaltyConfig};
use crate::fit::{fit, initial_values, FitError, FitOptions, FitResult};
use crate::likelihood::ObjectiveKind;
use crate::model::{Model, ModelError};
use crate::params::ParameterLayout;
use crate::predict::{krige, PredictError, PredictOptions};
use crate::scoring::{crps_gaussian, ScoringError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SelectionError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("stage {stage}: {source}")]
    Stage { stage: u8, source: FitError },
    #[error(transparent)]
    Predict(#[from] PredictError),
    #[error(transparent)]
    Scoring(#[from] ScoringError),
    #[error("invalid tuning grid: {0}")]
    Grid(String),
    #[error("every grid cell failed; first error: {0}")]
    AllCellsFailed(String),
}

/// Mask of coefficients kept in the model.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActiveSet {
    pub mask: Vec<bool>,
    pub always: Vec<bool>,
}

impl ActiveSet {
    pub fn all(layout: &ParameterLayout) -> Self {
        Self { mask: vec![true; layout.len()], always: layout.always_active() }
    }

    pub fn intercepts(layout: &ParameterLayout) -> Self {
        let always = layout.always_active();
        Self { mask: always.clone(), always }
    }

    /// `{i : |v_i| > epsilon}` joined with the always-active coefficients.
    pub fn threshold(layout: &ParameterLayout, values: &[f64], epsilon: f64) -> Self {
        let always = layout.always_active();
        let mask = values.iter().zip(&always).map(|(v, &a)| a || v.abs() > epsilon).collect();
        Self { mask, always }
    }

    pub fn count(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }

    /// Labels of active coefficients.
    pub fn labels(&self, layout: &ParameterLayout) -> Vec<String> {
        layout.labels().into_iter().zip(&self.mask).filter(|(_, &m)| m).map(|(l, _)| l).collect()
    }
}

fn stage_options(base: &FitOptions) -> FitOptions {
    FitOptions { standard_errors: false, condition: false, ..*base }
}

/// Maximizes the stage-one objective over every coefficient and thresholds.
pub fn stage1_fit(
    model: &Model,
    data: &SpatialDataset,
    start: Option<&[f64]>,
    options: &FitOptions,
) -> Result<(FitResult, ActiveSet), SelectionError> {
    let init = match start {
        Some(s) => s.to_vec(),
        None => initial_values(model, data).map_err(|source| SelectionError::Stage { stage: 1, source })?,
    };
    let all = vec![true; model.layout.len()];
    let r = fit(model, data, ObjectiveKind::Stage1, &all, &init, &stage_options(options), "stage 1")
        .map_err(|source| SelectionError::Stage { stage: 1, source })?;
    let active = ActiveSet::threshold(&model.layout, &r.estimates, model.design.penalties.epsilon);
    Ok((r, active))
}

/// Maximizes the penalized log-likelihood over the active coefficients with
/// the rest pinned at 0, dropping coefficients that fall to the threshold
/// until the active set is stable.
pub fn stage2_refit(
    model: &Model,
    data: &SpatialDataset,
    active: &ActiveSet,
    start: &[f64],
    options: &FitOptions,
) -> Result<(FitResult, ActiveSet), SelectionError> {
    let eps = model.design.penalties.epsilon;
    let mut active = active.clone();
    let mut init: Vec<f64> = start.iter().zip(&active.mask).map(|(v, &m)| if m { *v } else { 0.0 }).collect();
    loop {
        let r = fit(model, data, ObjectiveKind::Penalized, &active.mask, &init, options, "stage 2")
            .map_err(|source| SelectionError::Stage { stage: 2, source })?;
        let next = ActiveSet::threshold(&model.layout, &r.estimates, eps);
        let dropped: Vec<bool> = active.mask.iter().zip(&next.mask).map(|(&a, &b)| a && !b).collect();
        if !dropped.iter().any(|&d| d) {
            return Ok((r, active));
        }
        for (i, d) in dropped.iter().enumerate() {
            if *d {
                active.mask[i] = false;
            }
        }
        init = r.estimates.iter().zip(&active.mask).map(|(v, &m)| if m { *v } else { 0.0 }).collect();
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TwoStageFit {
    pub stage1: FitResult,
    pub stage1_active: ActiveSet,
    pub stage2: FitResult,
    pub active: ActiveSet,
}

pub fn two_stage(model: &Model, data: &SpatialDataset, options: &FitOptions) -> Result<TwoStageFit, SelectionError> {
    let (stage1, stage1_active) = stage1_fit(model, data, None, options)?;
    let (stage2, active) = stage2_refit(model, data, &stage1_active, &stage1.estimates, options)?;
    Ok(TwoStageFit { stage1, stage1_active, stage2, active })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TuneGrid {
    pub lambda_r: Vec<f64>,
    pub lambda_mu: Vec<f64>,
    pub lambda_sigma: Vec<f64>,
    /// Share of the data held out for tuning.
    pub holdout_fraction: f64,
}

impl Default for TuneGrid {
    fn default() -> Self {
        Self {
            lambda_r: vec![0.0, 0.01, 0.1],
            lambda_mu: vec![0.0, 0.01, 0.1],
            lambda_sigma: vec![0.0, 0.01, 0.1],
            holdout_fraction: 0.3,
        }
    }
}

impl TuneGrid {
    pub fn validate(&self) -> Result<(), SelectionError> {
        if self.lambda_r.is_empty() || self.lambda_mu.is_empty() || self.lambda_sigma.is_empty() {
            return Err(SelectionError::Grid("every axis needs at least one value".into()));
        }
        if !(self.holdout_fraction > 0.0 && self.holdout_fraction < 1.0) {
            return Err(SelectionError::Grid(format!("holdout_fraction must lie in (0, 1), got {}", self.holdout_fraction)));
        }
        for v in self.lambda_r.iter().chain(&self.lambda_mu).chain(&self.lambda_sigma) {
            if !(*v >= 0.0) {
                return Err(SelectionError::Grid(format!("penalties must be nonnegative, got {v}")));
            }
        }
        Ok(())
    }

    /// Cells in `(lambda_r, lambda_mu, lambda_sigma)` lexicographic order.
    pub fn cells(&self) -> Vec<(f64, f64, f64)> {
        let mut out = Vec::new();
        for &r in &self.lambda_r {
            for &m in &self.lambda_mu {
                for &s in &self.lambda_sigma {
                    out.push((r, m, s));
                }
            }
        }
        out
    }
}

/// Seeded split into `(training, tuning)` indices, both sorted.
pub fn split_holdout(n: usize, fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let k = ((n as f64 * fraction).round() as usize).clamp(1, n.saturating_sub(1).max(1));
    let mut hold = idx[..k].to_vec();
    let mut train = idx[k..].to_vec();
    hold.sort_unstable();
    train.sort_unstable();
    (train, hold)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TuneCell {
    #[serde(with = "crate::serde_float")]
    pub lambda_r: f64,
    #[serde(with = "crate::serde_float")]
    pub lambda_mu: f64,
    #[serde(with = "crate::serde_float")]
    pub lambda_sigma: f64,
    pub crps: Option<f64>,
    pub active: Option<usize>,
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TuneResult {
    pub cells: Vec<TuneCell>,
    pub chosen: usize,
}

impl TuneResult {
    pub fn chosen_cell(&self) -> &TuneCell {
        &self.cells[self.chosen]
    }

    pub fn penalties(&self, base: &PenaltyConfig) -> PenaltyConfig {
        let c = self.chosen_cell();
        PenaltyConfig { lambda_r: c.lambda_r, lambda_mu: c.lambda_mu, lambda_sigma: c.lambda_sigma, ..*base }
    }
}

/// Mean CRPS of plug-in predictions at `holdout`, with the nugget added.
pub fn holdout_crps(model: &Model, train: &SpatialDataset, estimates: &[f64], holdout: &SpatialDataset) -> Result<f64, SelectionError> {
    let p = krige(model, train, estimates, &holdout.sites, &PredictOptions { include_nugget: true, full_covariance: false })?;
    let mut total = 0.0;
    for i in 0..holdout.n() {
        total += crps_gaussian(holdout.response[i], p.mean[i], p.sd[i]).map_err(|_| ScoringError::NonPositiveSd { index: i, sd: p.sd[i] })?;
    }
    Ok(total / holdout.n() as f64)
}

fn run_cell(
    design: &ModelDesign,
    names: &[String],
    train: &SpatialDataset,
    holdout: &SpatialDataset,
    cell: (f64, f64, f64),
    options: &FitOptions,
) -> Result<(f64, usize), SelectionError> {
    let mut d = design.clone();
    d.penalties.lambda_r = cell.0;
    d.penalties.lambda_mu = cell.1;
    d.penalties.lambda_sigma = cell.2;
    let model = Model::new(d, names)?;
    let fit = two_stage(&model, train, &FitOptions { standard_errors: false, condition: false, ..*options })?;
    Ok((holdout_crps(&model, train, &fit.stage2.estimates, holdout)?, fit.active.count()))
}

/// Lowest-CRPS successful cell; ties go to larger `(lambda_mu, lambda_sigma)`,
/// then larger `lambda_r`.
pub fn choose_cell(cells: &[TuneCell]) -> Option<usize> {
    (0..cells.len()).filter(|&i| cells[i].crps.is_some()).min_by(|&a, &b| {
        let (x, y) = (&cells[a], &cells[b]);
        x.crps
            .unwrap()
            .total_cmp(&y.crps.unwrap())
            .then(y.lambda_mu.total_cmp(&x.lambda_mu))
            .then(y.lambda_sigma.total_cmp(&x.lambda_sigma))
            .then(y.lambda_r.total_cmp(&x.lambda_r))
    })
}

/// Two-stage fit per grid cell scored by holdout CRPS; failed cells are kept
/// in the table and excluded from the choice. Ties go to larger
/// `(lambda_mu, lambda_sigma)`, then larger `lambda_r`.
pub fn tune(
    design: &ModelDesign,
    train: &SpatialDataset,
    holdout: &SpatialDataset,
    grid: &TuneGrid,
    options: &FitOptions,
) -> Result<TuneResult, SelectionError> {
    grid.validate()?;
    let names = train.covariate_names();
    let cells: Vec<TuneCell> = grid
        .cells()
        .into_par_iter()
        .map(|cell| {
            let (crps, active, error) = match run_cell(design, &names, train, holdout, cell, options) {
                Ok((c, a)) => (Some(c), Some(a), None),
                Err(e) => (None, None, Some(e.to_string())),
            };
            TuneCell { lambda_r: cell.0, lambda_mu: cell.1, lambda_sigma: cell.2, crps, active, error }
        })
        .collect();
    let chosen = choose_cell(&cells)
        .ok_or_else(|| SelectionError::AllCellsFailed(cells.iter().find_map(|c| c.error.clone()).unwrap_or_default()))?;
    Ok(TuneResult { cells, chosen })
}
