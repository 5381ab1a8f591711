//! Fit, predict, tune and score workflows plus their file artifacts.

use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::{Config, ConfigError, ScoringSection};
use crate::data::{fmt_f64, DataError, Sites, SpatialDataset, Standardization};
use crate::design::{ModelDesign, PenaltyConfig};
use crate::fit::{fit, initial_values, FitError, FitOptions, FitResult};
use crate::likelihood::ObjectiveKind;
use crate::model::{Model, ModelError};
use crate::predict::{krige, PredictError, PredictOptions, PredictiveDistribution};
use crate::scoring::{cluster_holdout, score_report, ScoreReport, ScoringError};
use crate::selection::{split_holdout, tune, two_stage, ActiveSet, SelectionError, TuneResult};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Fit(#[from] FitError),
    #[error(transparent)]
    Selection(#[from] SelectionError),
    #[error(transparent)]
    Predict(#[from] PredictError),
    #[error(transparent)]
    Scoring(#[from] ScoringError),
    #[error("cannot write {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("parameter file: {0}")]
    ParameterFile(String),
}

impl PipelineError {
    /// 2 configuration, 3 data, 4 numerical failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Config(_) => 2,
            PipelineError::Model(ModelError::Design(_)) => 2,
            PipelineError::Data(_) | PipelineError::Io { .. } | PipelineError::ParameterFile(_) => 3,
            PipelineError::Model(ModelError::Covariates { .. } | ModelError::Length { .. }) => 3,
            PipelineError::Selection(SelectionError::Grid(_)) => 2,
            _ => 4,
        }
    }
}

fn io_error(path: &Path) -> impl FnOnce(std::io::Error) -> PipelineError + '_ {
    move |source| PipelineError::Io { path: path.display().to_string(), source }
}

pub fn write_text(path: &Path, text: &str) -> Result<(), PipelineError> {
    std::fs::write(path, text).map_err(io_error(path))
}

pub fn to_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("report types serialize");
    s.push('\n');
    s
}

/// Coefficient values by label, in layout order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Coefficients {
    pub labels: Vec<String>,
    pub values: Vec<f64>,
}

/// Training sites and response stored alongside the estimates.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainingData {
    pub locations: Vec<[f64; 2]>,
    /// Standardized covariates, one column per name.
    pub covariates: Vec<Vec<f64>>,
    pub response: Vec<f64>,
}

pub const PARAMETER_FORMAT: &str = "nscov-parameters";
pub const PARAMETER_VERSION: u32 = 1;

/// Self-contained text record of a fitted model: design, standardization,
/// estimates and the conditioning data.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParameterFile {
    pub format: String,
    pub version: u32,
    pub design: ModelDesign,
    pub standardization: Standardization,
    pub dim: usize,
    pub labels: Vec<String>,
    pub estimates: Vec<f64>,
    pub training: TrainingData,
}

impl ParameterFile {
    pub fn new(model: &Model, data: &SpatialDataset, estimates: &[f64]) -> Self {
        Self {
            format: PARAMETER_FORMAT.to_string(),
            version: PARAMETER_VERSION,
            design: model.design.clone(),
            standardization: data.standardization.clone(),
            dim: data.dim,
            labels: model.layout.labels(),
            estimates: estimates.to_vec(),
            training: TrainingData {
                locations: data.sites.locations.clone(),
                covariates: data.sites.covariates.clone(),
                response: data.response.clone(),
            },
        }
    }

    pub fn to_json(&self) -> String {
        to_json(self)
    }

    pub fn from_json(text: &str) -> Result<Self, PipelineError> {
        let p: ParameterFile = serde_json::from_str(text).map_err(|e| PipelineError::ParameterFile(e.to_string()))?;
        if p.format != PARAMETER_FORMAT || p.version != PARAMETER_VERSION {
            return Err(PipelineError::ParameterFile(format!(
                "unsupported format '{}' version {}",
                p.format, p.version
            )));
        }
        Ok(p)
    }

    pub fn write(&self, path: &Path) -> Result<(), PipelineError> {
        write_text(path, &self.to_json())
    }

    pub fn read(path: &Path) -> Result<Self, PipelineError> {
        let text = std::fs::read_to_string(path).map_err(io_error(path))?;
        Self::from_json(&text)
    }

    /// Rebuilds the model and training data, checking labels and shapes.
    pub fn restore(&self) -> Result<(Model, SpatialDataset), PipelineError> {
        let names = self.standardization.names();
        let model = Model::new(self.design.clone(), &names)?;
        if model.layout.labels() != self.labels {
            return Err(PipelineError::ParameterFile("coefficient labels do not match the design".into()));
        }
        if self.estimates.len() != self.labels.len() {
            return Err(PipelineError::ParameterFile(format!(
                "{} estimates for {} labels",
                self.estimates.len(),
                self.labels.len()
            )));
        }
        let t = &self.training;
        let mut data = SpatialDataset::from_standardized(
            t.locations.clone(),
            t.response.clone(),
            t.covariates.clone(),
            self.standardization.clone(),
        )?;
        data.dim = self.dim;
        Ok((model, data))
    }

    pub fn predict(&self, sites: &Sites, options: &PredictOptions) -> Result<PredictiveDistribution, PipelineError> {
        let (model, data) = self.restore()?;
        Ok(krige(&model, &data, &self.estimates, sites, options)?)
    }
}

/// Everything the fit subcommand reports.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub n: usize,
    pub penalties: PenaltyConfig,
    pub two_stage: bool,
    /// Labels of the coefficients left free in the final fit.
    pub active: Vec<String>,
    pub stage1: Option<FitResult>,
    pub fit: FitResult,
    pub wall_time: f64,
}

/// Two-stage selection, or a single penalized fit over every coefficient.
pub fn run_fit(model: &Model, data: &SpatialDataset, two: bool, options: &FitOptions) -> Result<FitReport, PipelineError> {
    let t0 = Instant::now();
    let (stage1, fit_result, active) = if two {
        let r = two_stage(model, data, options)?;
        (Some(r.stage1), r.stage2, r.active)
    } else {
        let init = initial_values(model, data)?;
        let all = vec![true; model.layout.len()];
        let r = fit(model, data, ObjectiveKind::Penalized, &all, &init, options, "fit")?;
        (None, r, ActiveSet::all(&model.layout))
    };
    Ok(FitReport {
        n: data.n(),
        penalties: model.design.penalties,
        two_stage: two,
        active: active.labels(&model.layout),
        stage1,
        fit: fit_result,
        wall_time: t0.elapsed().as_secs_f64(),
    })
}

/// k-means folds: each cluster is predicted from the others, with the given
/// estimates or, when `refit` is set, with parameters re-estimated per fold.
pub fn cluster_scores(
    model: &Model,
    data: &SpatialDataset,
    estimates: &[f64],
    scoring: &ScoringSection,
    refit: Option<(bool, &FitOptions)>,
) -> Result<(ScoreReport, Vec<usize>, PredictiveDistribution), PipelineError> {
    let labels = cluster_holdout(&data.sites.locations, scoring.clusters, scoring.seed)?;
    let n = data.n();
    let opts = PredictOptions { include_nugget: scoring.include_nugget, full_covariance: false };
    let folds: Vec<(Vec<usize>, PredictiveDistribution)> = (0..scoring.clusters)
        .into_par_iter()
        .map(|c| {
            let hold: Vec<usize> = (0..n).filter(|&i| labels[i] == c).collect();
            let train: Vec<usize> = (0..n).filter(|&i| labels[i] != c).collect();
            if hold.is_empty() {
                return Ok((hold, PredictiveDistribution { mean: vec![], sd: vec![], covariance: None, include_nugget: opts.include_nugget }));
            }
            let tr = data.subset(&train);
            let est = match refit {
                Some((two, fo)) => run_fit(model, &tr, two, fo)?.fit.estimates,
                None => estimates.to_vec(),
            };
            let p = krige(model, &tr, &est, &data.sites.subset(&hold), &opts)?;
            Ok((hold, p))
        })
        .collect::<Result<_, PipelineError>>()?;
    let mut mean = vec![0.0; n];
    let mut sd = vec![0.0; n];
    for (hold, p) in &folds {
        for (k, &i) in hold.iter().enumerate() {
            mean[i] = p.mean[k];
            sd[i] = p.sd[k];
        }
    }
    let report = score_report(&data.response, &mean, &sd, &labels, scoring.clusters, scoring.seed)?;
    let dist = PredictiveDistribution { mean, sd, covariance: None, include_nugget: opts.include_nugget };
    Ok((report, labels, dist))
}

/// Seeded tuning split followed by the grid search.
pub fn run_tune(config: &Config, data: &SpatialDataset) -> Result<TuneResult, PipelineError> {
    let (train, hold) = split_holdout(data.n(), config.tune.holdout_fraction, config.design.seed);
    Ok(tune(&config.design(), &data.subset(&train), &data.subset(&hold), &config.tune, &config.fit_options())?)
}

/// Outcome of tune, two-stage fit at the chosen penalties and the scored
/// k-means report.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PipelineReport {
    pub tune: TuneResult,
    pub fit: FitReport,
    pub score: ScoreReport,
    pub labels: Vec<usize>,
    pub wall_time: f64,
}

pub fn run_pipeline(config: &Config, data: &SpatialDataset) -> Result<(PipelineReport, ParameterFile), PipelineError> {
    let t0 = Instant::now();
    let tuned = run_tune(config, data)?;
    let mut design = config.design();
    design.penalties = tuned.penalties(&design.penalties);
    let model = Model::new(design, &data.covariate_names())?;
    let options = config.fit_options();
    let fit_report = run_fit(&model, data, true, &options)?;
    let refit = config.scoring.refit.then_some((true, &options));
    let (score, labels, _) = cluster_scores(&model, data, &fit_report.fit.estimates, &config.scoring, refit)?;
    let params = ParameterFile::new(&model, data, &fit_report.fit.estimates);
    let report = PipelineReport { tune: tuned, fit: fit_report, score, labels, wall_time: t0.elapsed().as_secs_f64() };
    Ok((report, params))
}

fn opt(v: Option<f64>) -> String {
    v.map(fmt_f64).unwrap_or_default()
}

/// One row per grid cell plus a `chosen` flag.
pub fn tune_table(result: &TuneResult) -> String {
    let mut s = String::from("lambda_r,lambda_mu,lambda_sigma,crps,active,chosen,error\n");
    for (i, c) in result.cells.iter().enumerate() {
        let err = c.error.as_deref().unwrap_or("").replace(['"', '\n'], " ");
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},\"{}\"",
            fmt_f64(c.lambda_r),
            fmt_f64(c.lambda_mu),
            fmt_f64(c.lambda_sigma),
            opt(c.crps),
            c.active.map(|a| a.to_string()).unwrap_or_default(),
            i == result.chosen,
            err
        );
    }
    s
}

/// `x[,y],mean,sd` rows.
pub fn prediction_table(dim: usize, sites: &Sites, p: &PredictiveDistribution) -> String {
    let mut s = String::from(if dim == 2 { "x,y,mean,sd\n" } else { "x,mean,sd\n" });
    for (i, l) in sites.locations.iter().enumerate() {
        if dim == 2 {
            let _ = writeln!(s, "{},{},{},{}", fmt_f64(l[0]), fmt_f64(l[1]), fmt_f64(p.mean[i]), fmt_f64(p.sd[i]));
        } else {
            let _ = writeln!(s, "{},{},{}", fmt_f64(l[0]), fmt_f64(p.mean[i]), fmt_f64(p.sd[i]));
        }
    }
    s
}

/// One row per cluster with every metric.
pub fn cluster_table(report: &ScoreReport) -> String {
    let mut s = String::from("cluster,n,rmspe,crps,crps_q95,logscore,ks,cpi\n");
    for (c, m) in report.clusters.iter().enumerate() {
        match m {
            Some(m) => {
                let v = m.values();
                let _ = writeln!(
                    s,
                    "{c},{},{},{},{},{},{},{}",
                    m.n,
                    fmt_f64(v[0]),
                    fmt_f64(v[1]),
                    fmt_f64(v[2]),
                    fmt_f64(v[3]),
                    fmt_f64(v[4]),
                    fmt_f64(v[5])
                );
            }
            None => {
                let _ = writeln!(s, "{c},0,,,,,,");
            }
        }
    }
    s
}

/// Writes `score.json`, `score.txt` and `clusters.csv` into `dir`.
pub fn write_score(dir: &Path, report: &ScoreReport, model_name: &str) -> Result<(), PipelineError> {
    write_text(&dir.join("score.json"), &to_json(report))?;
    write_text(&dir.join("score.txt"), &report.table(model_name))?;
    write_text(&dir.join("clusters.csv"), &cluster_table(report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{simulate_study, SimulationSpec};

    fn study(n: usize) -> (Config, SpatialDataset) {
        let mut c = Config::from_toml("[design.mean]\ncovariates = [\"sin_x\"]\n[design.smooth]\nnu_min = 0.5\nnu_max = 0.5\n")
            .unwrap();
        c.simulate = SimulationSpec { n, covariates: vec!["sin_x".into()], ..Default::default() };
        c.simulate.truth.insert("beta[sin_x]".into(), 1.0);
        let s = simulate_study(&c.simulate, &c.design()).unwrap();
        let names = c.covariate_names();
        let d = s.training(&names).unwrap();
        (c, d)
    }

    #[test]
    fn parameter_file_round_trip_is_bitwise() {
        let (c, d) = study(60);
        let model = Model::new(c.design(), &d.covariate_names()).unwrap();
        let opts = FitOptions { standard_errors: false, ..c.fit_options() };
        let r = run_fit(&model, &d, false, &opts).unwrap();
        let p = ParameterFile::new(&model, &d, &r.fit.estimates);
        let back = ParameterFile::from_json(&p.to_json()).unwrap();
        assert_eq!(back, p);
        let new = d.sites.subset(&[0, 5, 9]);
        let a = krige(&model, &d, &r.fit.estimates, &new, &PredictOptions::default()).unwrap();
        let b = back.predict(&new, &PredictOptions::default()).unwrap();
        assert_eq!(a.mean.iter().map(|v| v.to_bits()).collect::<Vec<_>>(), b.mean.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
        assert_eq!(a.sd.iter().map(|v| v.to_bits()).collect::<Vec<_>>(), b.sd.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
    }

    #[test]
    fn parameter_file_rejects_other_formats() {
        let (c, d) = study(10);
        let model = Model::new(c.design(), &d.covariate_names()).unwrap();
        let mut p = ParameterFile::new(&model, &d, &vec![0.0; model.layout.len()]);
        p.version = 99;
        assert!(matches!(ParameterFile::from_json(&p.to_json()), Err(PipelineError::ParameterFile(_))));
    }

    #[test]
    fn cluster_scores_cover_every_point() {
        let (c, d) = study(80);
        let model = Model::new(c.design(), &d.covariate_names()).unwrap();
        let est = initial_values(&model, &d).unwrap();
        let scoring = ScoringSection { clusters: 4, ..Default::default() };
        let (report, labels, dist) = cluster_scores(&model, &d, &est, &scoring, None).unwrap();
        assert_eq!(labels.len(), 80);
        assert!(dist.sd.iter().all(|&s| s > 0.0));
        assert_eq!(report.clusters.iter().flatten().map(|m| m.n).sum::<usize>(), 80);
        assert_eq!(cluster_table(&report).lines().count(), 5);
    }

    #[test]
    fn single_cell_tune_table_has_one_row() {
        let (mut c, d) = study(50);
        c.tune.lambda_r = vec![0.0];
        c.tune.lambda_mu = vec![0.0];
        c.tune.lambda_sigma = vec![0.0];
        c.fit.standard_errors = false;
        let t = run_tune(&c, &d).unwrap();
        let table = tune_table(&t);
        assert_eq!(table.lines().count(), 2);
        assert!(table.lines().nth(1).unwrap().contains(",true,"));
    }
}
