use std::path::{Path, PathBuf};

use nscov::config::Config;
use nscov::data::{load_csv, load_sites_csv, write_csv, CsvColumns, SpatialDataset};
use nscov::experiments::{run_study, StudyId, StudySpec};
use nscov::model::Model;
use nscov::pipeline::{
    cluster_scores, prediction_table, Coefficients, run_fit, run_pipeline, run_tune, to_json, tune_table, write_score, write_text,
    ParameterFile, PipelineError,
};
use nscov::synth::simulate_study;

use crate::Common;

pub type Failure = (u8, String);

fn fail(e: PipelineError) -> Failure {
    (e.exit_code() as u8, e.to_string())
}

/// Converts a library error into an exit code and message.
macro_rules! wrap {
    ($e:expr) => {
        $e.map_err(|e| fail(PipelineError::from(e)))?
    };
}

fn load_config(c: &Common) -> Result<(Config, Option<PathBuf>), Failure> {
    let mut cfg = match &c.config {
        Some(p) => wrap!(Config::load(p)),
        None => Config::default(),
    };
    if let Some(t) = &c.taper {
        wrap!(cfg.set_taper(t));
    }
    if let Some(s) = c.seed {
        cfg.design.seed = s;
        cfg.simulate.seed = s;
        cfg.scoring.seed = s;
    }
    let base = c.config.as_deref().and_then(Path::parent).map(Path::to_path_buf);
    Ok((cfg, base))
}

/// `--data`, else `data.path` resolved against the config directory.
fn data_path(c: &Common, cfg: &Config, base: Option<&Path>) -> Result<PathBuf, Failure> {
    if let Some(p) = &c.data {
        return Ok(p.clone());
    }
    match &cfg.data.path {
        Some(p) if p.is_relative() => Ok(base.map(|b| b.join(p)).unwrap_or_else(|| p.clone())),
        Some(p) => Ok(p.clone()),
        None => Err((2, "config field 'data.path': no input file; pass --data or set data.path".into())),
    }
}

fn out_dir(c: &Common) -> Result<PathBuf, Failure> {
    std::fs::create_dir_all(&c.out).map_err(|e| (3, format!("cannot create {}: {e}", c.out.display())))?;
    Ok(c.out.clone())
}

fn training(c: &Common) -> Result<(Config, SpatialDataset, PathBuf), Failure> {
    let (cfg, base) = load_config(c)?;
    let path = data_path(c, &cfg, base.as_deref())?;
    let data = wrap!(load_csv(&path, &cfg.csv_columns(true), &cfg.data.log));
    let out = out_dir(c)?;
    Ok((cfg, data, out))
}

pub fn simulate(c: &Common) -> Result<String, Failure> {
    let (cfg, _) = load_config(c)?;
    let mut spec = cfg.simulate.clone();
    if spec.covariates.is_empty() {
        spec.covariates = cfg.covariate_names();
    }
    let mut design = cfg.design();
    design.taper = nscov::covkernel::TaperSpec::none();
    let study = simulate_study(&spec, &design).map_err(|e| (4, e.to_string()))?;
    let out = out_dir(c)?;
    let mut columns: Vec<(String, Vec<f64>)> =
        spec.covariates.iter().cloned().zip(study.sites.covariates.iter().cloned()).collect();
    columns.push((cfg.data.response.clone(), study.response.clone()));
    let all = {
        let mut v = columns.clone();
        v.push(("holdout".into(), study.holdout.iter().map(|&h| f64::from(u8::from(h))).collect()));
        v
    };
    let write = |name: &str, idx: &[usize], cols: &[(String, Vec<f64>)]| -> Result<(), Failure> {
        let locs: Vec<[f64; 2]> = idx.iter().map(|&i| study.sites.locations[i]).collect();
        let cols: Vec<(String, Vec<f64>)> =
            cols.iter().map(|(n, v)| (n.clone(), idx.iter().map(|&i| v[i]).collect())).collect();
        wrap!(write_csv(&out.join(name), 2, &locs, &cols));
        Ok(())
    };
    let n = study.response.len();
    let every: Vec<usize> = (0..n).collect();
    let train: Vec<usize> = (0..n).filter(|&i| !study.holdout[i]).collect();
    let hold: Vec<usize> = (0..n).filter(|&i| study.holdout[i]).collect();
    write("simulated.csv", &every, &all)?;
    write("train.csv", &train, &columns)?;
    write("holdout.csv", &hold, &columns)?;
    let model = Model::new(design, &spec.covariates).map_err(|e| (2, e.to_string()))?;
    let truth = Coefficients { labels: model.layout.labels(), values: study.truth.clone() };
    wrap!(write_text(&out.join("truth.json"), &to_json(&truth)));
    Ok(format!(
        "simulated {n} sites ({} training, {} holdout){} into {}",
        train.len(),
        hold.len(),
        if study.jittered { " with diagonal jitter" } else { "" },
        out.display()
    ))
}

pub fn fit(c: &Common) -> Result<String, Failure> {
    let (cfg, data, out) = training(c)?;
    let model = wrap!(Model::new(cfg.design(), &data.covariate_names()));
    let report = wrap!(run_fit(&model, &data, cfg.fit.two_stage, &cfg.fit_options()));
    wrap!(write_text(&out.join("fit.json"), &to_json(&report)));
    wrap!(ParameterFile::new(&model, &data, &report.fit.estimates).write(&out.join("params.json")));
    Ok(format!(
        "fit n={}: loglik {:.6}, objective {:.6}, {} active coefficients, converged {}, {:.2}s",
        report.n,
        report.fit.loglik,
        report.fit.objective,
        report.active.len(),
        report.fit.converged,
        report.wall_time
    ))
}

fn sites_columns(cfg: &Config, params: &ParameterFile, with_response: bool) -> CsvColumns {
    CsvColumns {
        x: cfg.data.x.clone(),
        y: (params.dim == 2).then(|| cfg.data.y.clone()),
        response: with_response.then(|| cfg.data.response.clone()),
        covariates: params.standardization.names(),
    }
}

pub fn predict(c: &Common, params: Option<PathBuf>) -> Result<String, Failure> {
    let (cfg, base) = load_config(c)?;
    let path = data_path(c, &cfg, base.as_deref())?;
    let out = out_dir(c)?;
    let params = wrap!(ParameterFile::read(&params.unwrap_or_else(|| out.join("params.json"))));
    let (sites, _) = wrap!(load_sites_csv(&path, &sites_columns(&cfg, &params, false), &params.standardization));
    let p = wrap!(params.predict(&sites, &cfg.predict));
    wrap!(write_text(&out.join("predictions.csv"), &prediction_table(params.dim, &sites, &p)));
    Ok(format!("predicted {} sites into {}", sites.n(), out.join("predictions.csv").display()))
}

pub fn tune(c: &Common) -> Result<String, Failure> {
    let (cfg, data, out) = training(c)?;
    let r = wrap!(run_tune(&cfg, &data));
    wrap!(write_text(&out.join("tune.csv"), &tune_table(&r)));
    wrap!(write_text(&out.join("tune.json"), &to_json(&r)));
    let ch = r.chosen_cell();
    Ok(format!(
        "tuned {} cells; chosen lambda_r={} lambda_mu={} lambda_sigma={} (holdout CRPS {:.6})",
        r.cells.len(),
        ch.lambda_r,
        ch.lambda_mu,
        ch.lambda_sigma,
        ch.crps.unwrap_or(f64::NAN)
    ))
}

pub fn score(c: &Common, params: Option<PathBuf>) -> Result<String, Failure> {
    let (cfg, base) = load_config(c)?;
    let path = data_path(c, &cfg, base.as_deref())?;
    let out = out_dir(c)?;
    let refit = cfg.fit_options();
    let (model, data, estimates) = match params {
        Some(p) => {
            let params = wrap!(ParameterFile::read(&p));
            let (model, _) = wrap!(params.restore());
            let (sites, z) = wrap!(load_sites_csv(&path, &sites_columns(&cfg, &params, true), &params.standardization));
            let z = z.ok_or((3, "missing response column".to_string()))?;
            let mut data =
                wrap!(SpatialDataset::from_standardized(sites.locations, z, sites.covariates, params.standardization.clone()));
            data.dim = params.dim;
            (model, data, params.estimates.clone())
        }
        None => {
            let data = wrap!(load_csv(&path, &cfg.csv_columns(true), &cfg.data.log));
            let model = wrap!(Model::new(cfg.design(), &data.covariate_names()));
            let r = wrap!(run_fit(&model, &data, cfg.fit.two_stage, &refit));
            (model, data, r.fit.estimates)
        }
    };
    let refit = cfg.scoring.refit.then_some((cfg.fit.two_stage, &refit));
    let (report, _, _) = wrap!(cluster_scores(&model, &data, &estimates, &cfg.scoring, refit));
    wrap!(write_score(&out, &report, "model"));
    Ok(report.table("model"))
}

pub fn pipeline(c: &Common) -> Result<String, Failure> {
    let (cfg, data, out) = training(c)?;
    let (report, params) = wrap!(run_pipeline(&cfg, &data));
    wrap!(write_text(&out.join("tune.csv"), &tune_table(&report.tune)));
    wrap!(write_text(&out.join("fit.json"), &to_json(&report.fit)));
    wrap!(params.write(&out.join("params.json")));
    wrap!(write_score(&out, &report.score, "model"));
    wrap!(write_text(&out.join("pipeline.json"), &to_json(&report)));
    Ok(report.score.table("model"))
}

pub fn study(id: &str, out: PathBuf, replicates: Option<usize>, seed: u64) -> Result<String, Failure> {
    let id: StudyId = id.parse().map_err(|e: nscov::experiments::StudyError| (2, e.to_string()))?;
    let mut spec = StudySpec::new(id, out);
    spec.seed = seed;
    if let Some(r) = replicates {
        spec.replicates = r;
    }
    run_study(&spec).map_err(|e| (e.exit_code() as u8, e.to_string()))
}
