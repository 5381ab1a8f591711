//! Stationary data fitted by a stationary model and by the covariate-driven
//! model that nests it.

use std::fmt::Write as _;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{io, replicate_seed, StudyError};
use crate::data::{fmt_f64, Sites, SpatialDataset};
use crate::design::ModelDesign;
use crate::fit::{fit, initial_values, FitOptions};
use crate::likelihood::ObjectiveKind;
use crate::model::Model;
use crate::pipeline::to_json;
use crate::predict::simulate;
use crate::synth::{covariate_table, sample_locations, SiteLayout};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NestedConfig {
    pub n: usize,
    pub nu: f64,
    pub scale: f64,
}

impl Default for NestedConfig {
    fn default() -> Self {
        Self { n: 150, nu: 1.5, scale: 0.15 }
    }
}

impl NestedConfig {
    pub fn covariates() -> Vec<String> {
        vec!["sin_x".into(), "sin_y".into()]
    }

    pub fn stationary(&self) -> ModelDesign {
        ModelDesign::stationary(self.nu)
    }

    pub fn full(&self) -> ModelDesign {
        let mut d = ModelDesign::stationary(self.nu);
        d.mean = Self::covariates();
        d.std_dev = Self::covariates();
        d.scale = Self::covariates();
        d
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NestedRow {
    pub replicate: usize,
    pub loglik_stationary: f64,
    pub loglik_full: f64,
    /// `2 (loglik_full - loglik_stationary)`.
    pub lr: f64,
    pub converged: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NestedSummary {
    pub replicates: usize,
    pub seed: u64,
    /// Extra coefficients of the full model.
    pub df: usize,
    pub nested_ok: usize,
    pub mean_lr: f64,
}

impl NestedSummary {
    pub fn describe(&self) -> String {
        format!(
            "nested: full loglik >= stationary loglik in {}/{} replicates; mean LR {:.3} on {} extra coefficients",
            self.nested_ok, self.replicates, self.mean_lr, self.df
        )
    }
}

#[derive(Clone, Debug)]
pub struct NestedResult {
    pub config: NestedConfig,
    pub rows: Vec<NestedRow>,
    pub summary: NestedSummary,
}

fn numerical(e: impl ToString) -> StudyError {
    StudyError::Numerical(e.to_string())
}

/// The full fit starts at the stationary optimum with zero slopes, so its
/// log-likelihood can only improve on it.
pub fn run(cfg: &NestedConfig, replicates: usize, seed: u64) -> Result<NestedResult, StudyError> {
    let names = NestedConfig::covariates();
    let stat = Model::new(cfg.stationary(), &names).map_err(numerical)?;
    let full = Model::new(cfg.full(), &names).map_err(numerical)?;
    let opts = FitOptions { standard_errors: false, condition: false, ..Default::default() };
    let mut rows = Vec::new();
    for r in 0..replicates {
        let rs = replicate_seed(seed, r);
        let mut rng = ChaCha8Rng::seed_from_u64(rs);
        let locs = sample_locations(cfg.n, SiteLayout::Uniform, &mut rng);
        let cov = covariate_table(&names, &locs, &mut rng).map_err(numerical)?;
        let sites = Sites::new(locs, cov).map_err(numerical)?;
        let truth = vec![0.0, 0.0, cfg.scale.ln()];
        let (z, _) = simulate(&stat, &sites, &truth, rs.wrapping_add(1)).map_err(numerical)?;
        let data = SpatialDataset::standardized(sites, z, &names).map_err(numerical)?;

        let init = initial_values(&stat, &data).map_err(numerical)?;
        let all = vec![true; stat.layout.len()];
        let s = fit(&stat, &data, ObjectiveKind::Loglik, &all, &init, &opts, "stationary").map_err(numerical)?;
        let labels = full.layout.labels();
        let start: Vec<f64> = labels
            .iter()
            .map(|l| s.labels.iter().position(|k| k == l).map(|i| s.estimates[i]).unwrap_or(0.0))
            .collect();
        let all = vec![true; full.layout.len()];
        let f = fit(&full, &data, ObjectiveKind::Loglik, &all, &start, &opts, "full").map_err(numerical)?;
        rows.push(NestedRow {
            replicate: r,
            loglik_stationary: s.loglik,
            loglik_full: f.loglik,
            lr: 2.0 * (f.loglik - s.loglik),
            converged: s.converged && f.converged,
        });
    }
    let summary = NestedSummary {
        replicates,
        seed,
        df: full.layout.len() - stat.layout.len(),
        nested_ok: rows.iter().filter(|r| r.loglik_full >= r.loglik_stationary).count(),
        mean_lr: rows.iter().map(|r| r.lr).sum::<f64>() / rows.len() as f64,
    };
    Ok(NestedResult { config: cfg.clone(), rows, summary })
}

impl NestedResult {
    /// Writes `nested.csv` and `nested_summary.json`.
    pub fn write(&self, dir: &Path) -> Result<(), StudyError> {
        let mut t = String::from("replicate,loglik_stationary,loglik_full,lr,converged\n");
        for r in &self.rows {
            let _ = writeln!(
                t,
                "{},{},{},{},{}",
                r.replicate,
                fmt_f64(r.loglik_stationary),
                fmt_f64(r.loglik_full),
                fmt_f64(r.lr),
                r.converged
            );
        }
        let path = dir.join("nested.csv");
        std::fs::write(&path, t).map_err(|e| io(&path, e))?;
        let path = dir.join("nested_summary.json");
        std::fs::write(&path, to_json(&(&self.config, &self.summary))).map_err(|e| io(&path, e))
    }
}
