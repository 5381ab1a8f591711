//! Regularization path of the microergodic penalty on a synthetic
//! nonstationary field with sinusoidal covariates in each axis.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{io, replicate_seed, StudyError};
use crate::data::{fmt_f64, Sites, SpatialDataset};
use crate::design::{Component, ModelDesign};
use crate::fit::FitOptions;
use crate::model::Model;
use crate::pipeline::{run_fit, to_json};
use crate::predict::{krige, simulate, PredictOptions};
use crate::scoring::crps_gaussian;
use crate::synth::{covariate_table, sample_locations, truth_vector, SiteLayout};

/// Generator and sweep constants.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Fig6Config {
    pub n: usize,
    pub n_predict: usize,
    pub nu: f64,
    pub mean_slope: f64,
    /// Slope of both covariates in the log-variance.
    pub variance_slope: f64,
    /// Slope of both covariates in the log-scale.
    pub scale_slope: f64,
    pub scale: f64,
    pub lambda_r: Vec<f64>,
}

impl Default for Fig6Config {
    fn default() -> Self {
        Self {
            n: 300,
            n_predict: 50,
            nu: 1.5,
            mean_slope: 1.0,
            variance_slope: 0.5,
            scale_slope: 0.5,
            scale: 0.15,
            lambda_r: vec![0.0, 1e-2, 3e-2, 1e-1, 0.3],
        }
    }
}

impl Fig6Config {
    pub fn covariates() -> Vec<String> {
        vec!["sin_x".into(), "sin_y".into()]
    }

    pub fn design(&self) -> ModelDesign {
        let mut d = ModelDesign::stationary(self.nu);
        d.mean = Self::covariates();
        d.std_dev = Self::covariates();
        d.scale = Self::covariates();
        d
    }

    pub fn truth(&self) -> BTreeMap<String, f64> {
        let mut t = BTreeMap::new();
        for c in Self::covariates() {
            t.insert(format!("beta[{c}]"), self.mean_slope);
            t.insert(format!("alpha[{c}]"), self.variance_slope);
            t.insert(format!("theta_ms[{c}]"), self.scale_slope);
        }
        t.insert("theta_ms[intercept]".into(), self.scale.ln());
        t
    }
}

/// One point of the path.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PathRow {
    pub replicate: usize,
    pub lambda_r: f64,
    pub error: Option<String>,
    pub converged: bool,
    pub condition: f64,
    pub loglik: f64,
    pub rmspe: f64,
    pub crps: f64,
    pub estimates: Vec<f64>,
    /// Relative change against `lambda_r = 0`: `|beta / beta_0 - 1|` for
    /// mean coefficients and `|exp(theta - theta_0) - 1|` for the log-linked
    /// covariance coefficients.
    pub relative_change: Vec<f64>,
    /// Largest relative change among the variance and scale intercepts.
    pub max_change_intercepts: f64,
    /// Largest relative change among the variance and scale slopes.
    pub max_change_slopes: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Fig6Summary {
    pub replicates: usize,
    pub seed: u64,
    pub failed: usize,
    /// Mean over replicates, per lambda.
    pub lambda_r: Vec<f64>,
    pub condition: Vec<f64>,
    pub rmspe: Vec<f64>,
    pub crps: Vec<f64>,
    pub condition_decreases: bool,
    /// Largest `|metric(lambda) / metric(0) - 1|` over the sweep.
    pub max_rmspe_deviation: f64,
    pub max_crps_deviation: f64,
    pub slopes_drift_less: bool,
}

impl Fig6Summary {
    pub fn describe(&self) -> String {
        format!(
            "fig6: condition {:.3e} -> {:.3e}; max RMSPE deviation {:.2}%, max CRPS deviation {:.2}%; slopes drift less than intercepts: {}",
            self.condition[0],
            self.condition[self.condition.len() - 1],
            100.0 * self.max_rmspe_deviation,
            100.0 * self.max_crps_deviation,
            self.slopes_drift_less
        )
    }
}

#[derive(Clone, Debug)]
pub struct Fig6Result {
    pub config: Fig6Config,
    pub labels: Vec<String>,
    pub rows: Vec<PathRow>,
    pub summary: Fig6Summary,
}

/// Training data and prediction sites with their true values.
pub fn generate(cfg: &Fig6Config, seed: u64) -> Result<(SpatialDataset, Sites, Vec<f64>), StudyError> {
    let names = Fig6Config::covariates();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut locs = sample_locations(cfg.n, SiteLayout::JitteredGrid, &mut rng);
    locs.extend(sample_locations(cfg.n_predict, SiteLayout::Uniform, &mut rng));
    let num = |e: &dyn std::fmt::Display| StudyError::Numerical(e.to_string());
    let cov = covariate_table(&names, &locs, &mut rng).map_err(|e| num(&e))?;
    let all = Sites::new(locs, cov).map_err(|e| num(&e))?;
    let model = Model::new(cfg.design(), &names).map_err(|e| num(&e))?;
    let truth = truth_vector(&model, &cfg.truth()).map_err(|e| num(&e))?;
    let (z, _) = simulate(&model, &all, &truth, seed.wrapping_add(1)).map_err(|e| num(&e))?;
    let train_idx: Vec<usize> = (0..cfg.n).collect();
    let pred_idx: Vec<usize> = (cfg.n..cfg.n + cfg.n_predict).collect();
    let train = SpatialDataset::standardized(all.subset(&train_idx), z[..cfg.n].to_vec(), &names).map_err(|e| num(&e))?;
    Ok((train, all.subset(&pred_idx), z[cfg.n..].to_vec()))
}

fn path_point(
    cfg: &Fig6Config,
    train: &SpatialDataset,
    sites: &Sites,
    truth: &[f64],
    lambda: f64,
) -> Result<(bool, f64, f64, f64, f64, Vec<f64>), String> {
    let mut d = cfg.design();
    d.penalties.lambda_r = lambda;
    let model = Model::new(d, &Fig6Config::covariates()).map_err(|e| e.to_string())?;
    let opts = FitOptions { standard_errors: false, condition: true, ..Default::default() };
    let report = run_fit(&model, train, false, &opts).map_err(|e| e.to_string())?;
    let f = report.fit;
    let p = krige(&model, train, &f.estimates, sites, &PredictOptions::default()).map_err(|e| e.to_string())?;
    let m = truth.len() as f64;
    let rmspe = (truth.iter().zip(&p.mean).map(|(z, mu)| (z - mu).powi(2)).sum::<f64>() / m).sqrt();
    let mut crps = 0.0;
    for i in 0..truth.len() {
        crps += crps_gaussian(truth[i], p.mean[i], p.sd[i]).map_err(|e| e.to_string())?;
    }
    Ok((f.converged, f.condition_estimate.unwrap_or(f64::NAN), f.loglik, rmspe, crps / m, f.estimates))
}

pub fn run(cfg: &Fig6Config, replicates: usize, seed: u64) -> Result<Fig6Result, StudyError> {
    let names = Fig6Config::covariates();
    let model = Model::new(cfg.design(), &names).map_err(|e| StudyError::Numerical(e.to_string()))?;
    let layout = &model.layout;
    let labels = layout.labels();
    let pick = |c: Component, intercept: bool| -> Vec<usize> {
        layout.range(c).filter(|&i| layout.entries()[i].is_intercept() == intercept).collect()
    };
    let intercepts: Vec<usize> = pick(Component::StdDev, true).into_iter().chain(pick(Component::Scale, true)).collect();
    let mean: Vec<usize> = layout.range(Component::Mean).collect();
    let slopes: Vec<usize> = pick(Component::StdDev, false).into_iter().chain(pick(Component::Scale, false)).collect();

    let mut rows = Vec::new();
    for r in 0..replicates {
        let rs = replicate_seed(seed, r);
        let (train, sites, truth) = generate(cfg, rs)?;
        let mut base: Option<Vec<f64>> = None;
        for &lambda in &cfg.lambda_r {
            let row = match path_point(cfg, &train, &sites, &truth, lambda) {
                Ok((converged, condition, loglik, rmspe, crps, est)) => {
                    let b = base.get_or_insert_with(|| est.clone()).clone();
                    let rel: Vec<f64> = (0..est.len())
                        .map(|i| if mean.contains(&i) { (est[i] / b[i] - 1.0).abs() } else { (est[i] - b[i]).exp_m1().abs() })
                        .collect();
                    let max_of = |idx: &[usize]| idx.iter().map(|&i| rel[i]).fold(0.0, f64::max);
                    PathRow {
                        replicate: r,
                        lambda_r: lambda,
                        error: None,
                        converged,
                        condition,
                        loglik,
                        rmspe,
                        crps,
                        max_change_intercepts: max_of(&intercepts),
                        max_change_slopes: max_of(&slopes),
                        relative_change: rel,
                        estimates: est,
                    }
                }
                Err(e) => PathRow {
                    replicate: r,
                    lambda_r: lambda,
                    error: Some(e),
                    converged: false,
                    condition: f64::NAN,
                    loglik: f64::NAN,
                    rmspe: f64::NAN,
                    crps: f64::NAN,
                    estimates: vec![],
                    relative_change: vec![],
                    max_change_intercepts: f64::NAN,
                    max_change_slopes: f64::NAN,
                },
            };
            rows.push(row);
        }
    }
    let summary = summarize(cfg, &rows, replicates, seed);
    Ok(Fig6Result { config: cfg.clone(), labels, rows, summary })
}

fn summarize(cfg: &Fig6Config, rows: &[PathRow], replicates: usize, seed: u64) -> Fig6Summary {
    let mean_at = |k: usize, f: &dyn Fn(&PathRow) -> f64| {
        let v: Vec<f64> = rows.iter().filter(|r| r.lambda_r == cfg.lambda_r[k] && r.error.is_none()).map(f).collect();
        v.iter().sum::<f64>() / v.len() as f64
    };
    let l = cfg.lambda_r.len();
    let condition: Vec<f64> = (0..l).map(|k| mean_at(k, &|r| r.condition)).collect();
    let rmspe: Vec<f64> = (0..l).map(|k| mean_at(k, &|r| r.rmspe)).collect();
    let crps: Vec<f64> = (0..l).map(|k| mean_at(k, &|r| r.crps)).collect();
    let dev = |v: &[f64]| v.iter().map(|x| (x / v[0] - 1.0).abs()).fold(0.0, |a: f64, b| if b.is_nan() { f64::INFINITY } else { a.max(b) });
    let slopes: f64 = rows.iter().map(|r| r.max_change_slopes).fold(0.0, f64::max);
    let intercepts: f64 = rows.iter().map(|r| r.max_change_intercepts).fold(0.0, f64::max);
    Fig6Summary {
        replicates,
        seed,
        failed: rows.iter().filter(|r| r.error.is_some()).count(),
        lambda_r: cfg.lambda_r.clone(),
        condition_decreases: condition[l - 1] < condition[0],
        max_rmspe_deviation: dev(&rmspe),
        max_crps_deviation: dev(&crps),
        slopes_drift_less: slopes < intercepts,
        condition,
        rmspe,
        crps,
    }
}

impl Fig6Result {
    /// Writes `fig6_path.csv` and `fig6_summary.json`.
    pub fn write(&self, dir: &Path) -> Result<(), StudyError> {
        let mut t = String::from(
            "replicate,lambda_r,status,condition,loglik,rmspe,crps,max_change_intercepts,max_change_slopes",
        );
        for l in &self.labels {
            let _ = write!(t, ",{l},change_{l}");
        }
        t.push('\n');
        for r in &self.rows {
            let status = match (&r.error, r.converged) {
                (Some(e), _) => format!("\"error: {}\"", e.replace('"', "'")),
                (None, true) => "converged".into(),
                (None, false) => "not_converged".into(),
            };
            let _ = write!(
                t,
                "{},{},{},{},{},{},{},{},{}",
                r.replicate,
                fmt_f64(r.lambda_r),
                status,
                fmt_f64(r.condition),
                fmt_f64(r.loglik),
                fmt_f64(r.rmspe),
                fmt_f64(r.crps),
                fmt_f64(r.max_change_intercepts),
                fmt_f64(r.max_change_slopes)
            );
            for i in 0..self.labels.len() {
                match (r.estimates.get(i), r.relative_change.get(i)) {
                    (Some(e), Some(c)) => {
                        let _ = write!(t, ",{},{}", fmt_f64(*e), fmt_f64(*c));
                    }
                    _ => t.push_str(",,"),
                }
            }
            t.push('\n');
        }
        let path = dir.join("fig6_path.csv");
        std::fs::write(&path, t).map_err(|e| io(&path, e))?;
        let path = dir.join("fig6_summary.json");
        std::fs::write(&path, to_json(&(&self.config, &self.summary))).map_err(|e| io(&path, e))
    }
}
