//! Sectioned TOML configuration shared by the batch front end.
//!
//! ```toml
//! [data]
//! path = "train.csv"
//! x = "x"
//! y = "y"
//! response = "z"
//! log = ["elevation"]
//!
//! [design]
//! nugget = false
//! reparam = true
//!
//! [design.mean]
//! covariates = ["elevation", "slope"]
//!
//! [design.scale]
//! covariates = ["elevation"]
//!
//! [design.aniso]
//! covariates = []
//!
//! [design.smooth]
//! nu_min = 0.5
//! nu_max = 2.5
//!
//! [taper]
//! family = "wendland1"
//! delta = 0.2
//!
//! [penalties]
//! lambda_r = 0.01
//! ```
//!
//! Omitting `[design.aniso]` or `[design.tilt]` disables the component;
//! an empty covariate list keeps it intercept-only.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::covkernel::{MaternConvention, SmoothnessBounds, TaperFamily, TaperSpec};
use crate::data::CsvColumns;
use crate::design::{ModelDesign, PenaltyConfig};
use crate::fit::FitOptions;
use crate::optimizer::OptimOptions;
use crate::predict::PredictOptions;
use crate::selection::TuneGrid;
use crate::synth::SimulationSpec;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("config parse error: {0}")]
    Parse(String),
    #[error("config field '{field}': {message}")]
    Invalid { field: String, message: String },
}

fn invalid(field: &str, message: impl ToString) -> ConfigError {
    ConfigError::Invalid { field: field.to_string(), message: message.to_string() }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    /// Training CSV; `--data` overrides it.
    pub path: Option<PathBuf>,
    pub x: String,
    pub y: String,
    /// 1 reads only the `x` column.
    pub dim: usize,
    pub response: String,
    /// Covariate columns to read; defaults to every covariate the design uses.
    pub covariates: Vec<String>,
    /// Columns log-transformed before standardization.
    pub log: Vec<String>,
}

impl Default for DataSection {
    fn default() -> Self {
        Self {
            path: None,
            x: "x".into(),
            y: "y".into(),
            dim: 2,
            response: "z".into(),
            covariates: vec![],
            log: vec![],
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CovariateList {
    pub covariates: Vec<String>,
}

/// Smoothness used when `[design.smooth]` gives no bounds.
pub const DEFAULT_NU: f64 = 1.5;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SmoothSection {
    pub covariates: Vec<String>,
    pub nu_min: f64,
    pub nu_max: f64,
}

impl Default for SmoothSection {
    fn default() -> Self {
        Self { covariates: vec![], nu_min: DEFAULT_NU, nu_max: DEFAULT_NU }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DesignSection {
    pub nugget: bool,
    pub reparam: bool,
    pub convention: MaternConvention,
    pub seed: u64,
    pub mean: CovariateList,
    pub std_dev: CovariateList,
    pub scale: CovariateList,
    pub aniso: Option<CovariateList>,
    pub tilt: Option<CovariateList>,
    pub smooth: SmoothSection,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TaperSection {
    pub family: TaperFamily,
    #[serde(with = "crate::serde_float")]
    pub delta: f64,
}

impl Default for TaperSection {
    fn default() -> Self {
        Self { family: TaperFamily::None, delta: f64::INFINITY }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitSection {
    /// Run stage-1 selection and the stage-2 refit; otherwise one fit of
    /// the penalized objective over every coefficient.
    pub two_stage: bool,
    pub rescue: bool,
    pub standard_errors: bool,
    pub condition: bool,
}

impl Default for FitSection {
    fn default() -> Self {
        let f = FitOptions::default();
        Self { two_stage: true, rescue: f.rescue, standard_errors: f.standard_errors, condition: f.condition }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScoringSection {
    /// Number of k-means clusters used as holdout folds.
    pub clusters: usize,
    pub seed: u64,
    pub include_nugget: bool,
    /// Re-estimate parameters without each fold instead of reusing the fit.
    pub refit: bool,
}

impl Default for ScoringSection {
    fn default() -> Self {
        Self { clusters: 10, seed: 1, include_nugget: true, refit: false }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub data: DataSection,
    pub design: DesignSection,
    pub taper: TaperSection,
    pub penalties: PenaltyConfig,
    pub optimizer: OptimOptions,
    pub fit: FitSection,
    pub tune: TuneGrid,
    pub predict: PredictOptions,
    pub scoring: ScoringSection,
    pub simulate: SimulationSpec,
}

impl Config {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let c: Config = toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|source| ConfigError::Io { path: path.display().to_string(), source })?;
        Self::from_toml(&text)
    }

    /// Overrides the taper with a `FAMILY:DELTA` string.
    pub fn set_taper(&mut self, spec: &str) -> Result<(), ConfigError> {
        let t = TaperSpec::parse(spec).map_err(|e| invalid("taper", e))?;
        self.taper = TaperSection { family: t.family, delta: t.delta };
        self.validate()
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if !(self.data.dim == 1 || self.data.dim == 2) {
            return Err(invalid("data.dim", format!("must be 1 or 2, got {}", self.data.dim)));
        }
        let columns = self.covariate_names();
        for c in &self.data.log {
            if !columns.contains(c) {
                return Err(invalid("data.log", format!("'{c}' is not a covariate column")));
            }
        }
        let design = self.design();
        for (field, list) in [
            ("design.mean", &design.mean),
            ("design.std_dev", &design.std_dev),
            ("design.scale", &design.scale),
            ("design.smooth", &design.smooth),
        ] {
            if let Some(c) = list.iter().find(|c| !columns.contains(c)) {
                return Err(invalid(field, format!("covariate '{c}' is not listed in data.covariates")));
            }
        }
        for (field, list) in [("design.aniso", &design.aniso), ("design.tilt", &design.tilt)] {
            if let Some(c) = list.iter().flatten().find(|c| !columns.contains(c)) {
                return Err(invalid(field, format!("covariate '{c}' is not listed in data.covariates")));
            }
        }
        SmoothnessBounds::new(design.smoothness.nu_min, design.smoothness.nu_max)
            .map_err(|e| invalid("design.smooth", e))?;
        TaperSpec::new(self.taper.family, self.taper.delta).map_err(|e| invalid("taper.delta", e))?;
        self.penalties.validate().map_err(|e| invalid("penalties", e))?;
        design.validate().map_err(|e| invalid("design", e))?;
        self.tune.validate().map_err(|e| invalid("tune", e))?;
        self.simulate.holdout.validate().map_err(|e| invalid("simulate.holdout", e))?;
        if self.scoring.clusters < 2 {
            return Err(invalid("scoring.clusters", "need at least 2 clusters"));
        }
        Ok(())
    }

    /// Covariate columns to read, in file order of first mention.
    pub fn covariate_names(&self) -> Vec<String> {
        if !self.data.covariates.is_empty() {
            return self.data.covariates.clone();
        }
        let d = &self.design;
        let mut out: Vec<String> = Vec::new();
        let lists = [
            Some(&d.mean.covariates),
            Some(&d.std_dev.covariates),
            Some(&d.scale.covariates),
            d.aniso.as_ref().map(|l| &l.covariates),
            d.tilt.as_ref().map(|l| &l.covariates),
            Some(&d.smooth.covariates),
        ];
        for c in lists.into_iter().flatten().flatten() {
            if !out.contains(c) {
                out.push(c.clone());
            }
        }
        out
    }

    pub fn design(&self) -> ModelDesign {
        let d = &self.design;
        ModelDesign {
            mean: d.mean.covariates.clone(),
            std_dev: d.std_dev.covariates.clone(),
            scale: d.scale.covariates.clone(),
            aniso: d.aniso.as_ref().map(|l| l.covariates.clone()),
            tilt: d.tilt.as_ref().map(|l| l.covariates.clone()),
            smooth: d.smooth.covariates.clone(),
            smoothness: SmoothnessBounds { nu_min: d.smooth.nu_min, nu_max: d.smooth.nu_max },
            taper: TaperSpec { family: self.taper.family, delta: self.taper.delta },
            penalties: self.penalties,
            nugget: d.nugget,
            reparam: d.reparam,
            convention: d.convention,
            seed: d.seed,
        }
    }

    pub fn fit_options(&self) -> FitOptions {
        FitOptions {
            optimizer: self.optimizer,
            rescue: self.fit.rescue,
            standard_errors: self.fit.standard_errors,
            condition: self.fit.condition,
        }
    }

    /// Column roles for training (`with_response`) or prediction files.
    pub fn csv_columns(&self, with_response: bool) -> CsvColumns {
        CsvColumns {
            x: self.data.x.clone(),
            y: (self.data.dim == 2).then(|| self.data.y.clone()),
            response: with_response.then(|| self.data.response.clone()),
            covariates: self.covariate_names(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const EXAMPLE: &str = r#"
[data]
x = "lon"
y = "lat"
response = "t"
log = ["elev"]

[design]
nugget = true
reparam = true

[design.mean]
covariates = ["elev", "slope"]

[design.scale]
covariates = ["elev"]

[design.aniso]
covariates = []

[design.smooth]
nu_min = 0.5
nu_max = 2.5
covariates = ["slope"]

[penalties]
lambda_r = "inf"
lambda_mu = 0.1

[optimizer]
max_iterations = 50

[tune]
lambda_r = [0.0]
lambda_mu = [0.0, 0.1]
lambda_sigma = [0.0]
"#;

    #[test]
    fn parses_sectioned_example() {
        let c = Config::from_toml(EXAMPLE).unwrap();
        assert_eq!(c.covariate_names(), vec!["elev".to_string(), "slope".to_string()]);
        let d = c.design();
        assert_eq!(d.aniso, Some(vec![]));
        assert_eq!(d.tilt, None);
        assert_eq!(d.smooth, vec!["slope".to_string()]);
        assert!(d.penalties.lambda_r.is_infinite());
        assert_eq!(c.optimizer.max_iterations, 50);
        assert_eq!(c.tune.cells().len(), 2);
        let cols = c.csv_columns(true);
        assert_eq!((cols.x.as_str(), cols.y.as_deref(), cols.response.as_deref()), ("lon", Some("lat"), Some("t")));
    }

    #[test]
    fn defaults_give_stationary_design() {
        let c = Config::from_toml("").unwrap();
        assert_eq!(c.design(), ModelDesign::stationary(DEFAULT_NU));
    }

    #[test]
    fn errors_name_the_field() {
        let bad = "[design.mean]\ncovariates = [\"a\"]\n[data]\ncovariates = [\"b\"]\n";
        match Config::from_toml(bad) {
            Err(ConfigError::Invalid { field, .. }) => assert_eq!(field, "design.mean"),
            other => panic!("unexpected {other:?}"),
        }
        match Config::from_toml("[taper]\nfamily = \"wendland1\"\ndelta = -1.0\n") {
            Err(ConfigError::Invalid { field, .. }) => assert_eq!(field, "taper.delta"),
            other => panic!("unexpected {other:?}"),
        }
        let e = Config::from_toml("[design]\nnuget = true\n").unwrap_err().to_string();
        assert!(e.contains("nuget"), "{e}");
    }

    #[test]
    fn taper_override() {
        let mut c = Config::from_toml("").unwrap();
        c.set_taper("wendland1:0.25").unwrap();
        assert_eq!(c.design().taper, TaperSpec::new(TaperFamily::Wendland1, 0.25).unwrap());
        assert!(c.set_taper("wendland1").is_err());
    }
}
