//! Synthetic designs on the unit square: site layouts, covariate fields,
//! truth vectors and holdout geometry.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{Sites, SpatialDataset};
use crate::design::{Component, ModelDesign};
use crate::model::{Model, ModelError};
use crate::predict::{simulate, PredictError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SynthError {
    #[error("unknown covariate field '{0}'")]
    UnknownField(String),
    #[error("truth entry '{0}' does not match any coefficient label")]
    UnknownLabel(String),
    #[error("invalid simulation setting: {0}")]
    Invalid(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Predict(#[from] PredictError),
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SiteLayout {
    #[default]
    Uniform,
    /// Cell-centred grid with uniform jitter of 30% of the spacing.
    JitteredGrid,
}

/// Unit-square site sample.
pub fn sample_locations(n: usize, layout: SiteLayout, rng: &mut ChaCha8Rng) -> Vec<[f64; 2]> {
    match layout {
        SiteLayout::Uniform => (0..n).map(|_| [rng.random::<f64>(), rng.random::<f64>()]).collect(),
        SiteLayout::JitteredGrid => {
            let mx = (n as f64).sqrt().ceil() as usize;
            let my = n.div_ceil(mx.max(1));
            let mut out = Vec::with_capacity(n);
            'grid: for b in 0..my {
                for a in 0..mx {
                    if out.len() == n {
                        break 'grid;
                    }
                    let jx = 0.6 * (rng.random::<f64>() - 0.5);
                    let jy = 0.6 * (rng.random::<f64>() - 0.5);
                    out.push([(a as f64 + 0.5 + jx) / mx as f64, (b as f64 + 0.5 + jy) / my as f64]);
                }
            }
            out
        }
    }
}

/// Names accepted by [`covariate_field`].
pub const FIELDS: [&str; 9] = ["sin_x", "sin_y", "cos_x", "cos_y", "lin_x", "lin_y", "lin_xy", "bump", "noise"];

/// Deterministic covariate surfaces of roughly unit scale; `noise` draws
/// from `rng`.
pub fn covariate_field(name: &str, loc: [f64; 2], rng: &mut ChaCha8Rng) -> Result<f64, SynthError> {
    let [x, y] = loc;
    let root12 = 12f64.sqrt();
    Ok(match name {
        "sin_x" => (2.0 * PI * x).sin(),
        "sin_y" => (2.0 * PI * y).sin(),
        "cos_x" => (2.0 * PI * x).cos(),
        "cos_y" => (2.0 * PI * y).cos(),
        "lin_x" => (x - 0.5) * root12,
        "lin_y" => (y - 0.5) * root12,
        "lin_xy" => (x - 0.5) * (y - 0.5) * 12.0,
        "bump" => (-((x - 0.5).powi(2) + (y - 0.5).powi(2)) / 0.08).exp() * 2.0 - 1.0,
        "noise" => StandardNormal.sample(rng),
        other => return Err(SynthError::UnknownField(other.to_string())),
    })
}

/// Column-major covariates for `names` at `locations`.
pub fn covariate_table(names: &[String], locations: &[[f64; 2]], rng: &mut ChaCha8Rng) -> Result<Vec<Vec<f64>>, SynthError> {
    names.iter().map(|n| locations.iter().map(|&l| covariate_field(n, l, rng)).collect()).collect()
}

/// Scale intercept used when the truth leaves it unspecified.
pub const DEFAULT_LOG_SCALE: f64 = -2.302_585_092_994_046;
/// Nugget log-variance used when the truth leaves it unspecified.
pub const DEFAULT_LOG_NUGGET: f64 = -4.605_170_185_988_091;

/// Parameter vector from `label -> value`; unspecified coefficients are 0
/// except the scale intercept (`ln 0.1`) and the nugget (`ln 0.01`).
pub fn truth_vector(model: &Model, truth: &BTreeMap<String, f64>) -> Result<Vec<f64>, SynthError> {
    let layout = &model.layout;
    let labels = layout.labels();
    let mut v = vec![0.0; layout.len()];
    v[layout.range(Component::Scale).start] = DEFAULT_LOG_SCALE;
    let nug = layout.range(Component::Nugget);
    if !nug.is_empty() {
        v[nug.start] = DEFAULT_LOG_NUGGET;
    }
    for (label, &value) in truth {
        let i = labels.iter().position(|l| l == label).ok_or_else(|| SynthError::UnknownLabel(label.clone()))?;
        v[i] = value;
    }
    Ok(v)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Axis {
    X,
    Y,
}

/// Sites with `start <= coordinate < start + width` on `axis`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Stripe {
    pub axis: Axis,
    pub start: f64,
    pub width: f64,
}

/// Extra holdout sites drawn from an isotropic Gaussian around `center`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Cluster {
    pub center: [f64; 2],
    pub sd: f64,
    pub count: usize,
}

/// Holdout made of stripes of base sites, added Gaussian clusters and a
/// random share of the remaining base sites.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HoldoutGeometry {
    pub stripes: Vec<Stripe>,
    pub clusters: Vec<Cluster>,
    pub random_fraction: f64,
}

impl Default for HoldoutGeometry {
    fn default() -> Self {
        Self {
            stripes: vec![
                Stripe { axis: Axis::X, start: 0.30, width: 0.03 },
                Stripe { axis: Axis::Y, start: 0.70, width: 0.06 },
            ],
            clusters: vec![
                Cluster { center: [0.2, 0.2], sd: 0.03, count: 20 },
                Cluster { center: [0.8, 0.45], sd: 0.02, count: 15 },
            ],
            random_fraction: 0.1,
        }
    }
}

impl HoldoutGeometry {
    /// No holdout at all.
    pub fn none() -> Self {
        Self { stripes: vec![], clusters: vec![], random_fraction: 0.0 }
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        if !(0.0..1.0).contains(&self.random_fraction) {
            return Err(SynthError::Invalid(format!("random_fraction must lie in [0, 1), got {}", self.random_fraction)));
        }
        if self.stripes.iter().any(|s| !(s.width > 0.0)) || self.clusters.iter().any(|c| !(c.sd > 0.0)) {
            return Err(SynthError::Invalid("stripe widths and cluster sds must be positive".into()));
        }
        Ok(())
    }

    /// Appends cluster sites to `base` and returns all sites with the
    /// holdout mask.
    pub fn apply(&self, base: Vec<[f64; 2]>, rng: &mut ChaCha8Rng) -> (Vec<[f64; 2]>, Vec<bool>) {
        let mut mask: Vec<bool> = base
            .iter()
            .map(|p| {
                self.stripes.iter().any(|s| {
                    let c = match s.axis {
                        Axis::X => p[0],
                        Axis::Y => p[1],
                    };
                    c >= s.start && c < s.start + s.width
                })
            })
            .collect();
        for m in mask.iter_mut() {
            let draw = rng.random::<f64>();
            if !*m && draw < self.random_fraction {
                *m = true;
            }
        }
        let mut sites = base;
        for c in &self.clusters {
            for _ in 0..c.count {
                let dx: f64 = StandardNormal.sample(rng);
                let dy: f64 = StandardNormal.sample(rng);
                sites.push([(c.center[0] + c.sd * dx).clamp(0.0, 1.0), (c.center[1] + c.sd * dy).clamp(0.0, 1.0)]);
                mask.push(true);
            }
        }
        (sites, mask)
    }
}

/// A seeded synthetic study dataset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulationSpec {
    /// Number of base sites before cluster sites are added.
    pub n: usize,
    pub seed: u64,
    pub layout: SiteLayout,
    pub covariates: Vec<String>,
    /// Coefficient values by label, e.g. `"beta[sin_x]" = 0.5`.
    pub truth: BTreeMap<String, f64>,
    pub holdout: HoldoutGeometry,
}

impl Default for SimulationSpec {
    fn default() -> Self {
        Self {
            n: 200,
            seed: 1,
            layout: SiteLayout::Uniform,
            covariates: vec![],
            truth: BTreeMap::new(),
            holdout: HoldoutGeometry::none(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SimulatedStudy {
    pub sites: Sites,
    pub response: Vec<f64>,
    pub holdout: Vec<bool>,
    pub truth: Vec<f64>,
    pub jittered: bool,
}

impl SimulatedStudy {
    fn part(&self, keep: bool, names: &[String]) -> Result<SpatialDataset, SynthError> {
        let idx: Vec<usize> = (0..self.holdout.len()).filter(|&i| self.holdout[i] == keep).collect();
        let sites = self.sites.subset(&idx);
        let z = idx.iter().map(|&i| self.response[i]).collect();
        SpatialDataset::standardized(sites, z, names).map_err(|e| SynthError::Invalid(e.to_string()))
    }

    pub fn training(&self, names: &[String]) -> Result<SpatialDataset, SynthError> {
        self.part(false, names)
    }

    pub fn holdout_set(&self, names: &[String]) -> Result<SpatialDataset, SynthError> {
        self.part(true, names)
    }
}

/// Draws sites, covariates and a response from `design` under `spec.truth`.
pub fn simulate_study(spec: &SimulationSpec, design: &ModelDesign) -> Result<SimulatedStudy, SynthError> {
    if spec.n == 0 {
        return Err(SynthError::Invalid("n must be positive".into()));
    }
    spec.holdout.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let base = sample_locations(spec.n, spec.layout, &mut rng);
    let (locations, holdout) = spec.holdout.apply(base, &mut rng);
    let covariates = covariate_table(&spec.covariates, &locations, &mut rng)?;
    let sites = Sites::new(locations, covariates).map_err(|e| SynthError::Invalid(e.to_string()))?;
    let model = Model::new(design.clone(), &spec.covariates)?;
    let truth = truth_vector(&model, &spec.truth)?;
    let (response, jittered) = simulate(&model, &sites, &truth, spec.seed.wrapping_add(0x9e37_79b9))?;
    Ok(SimulatedStudy { sites, response, holdout, truth, jittered })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layouts_stay_in_unit_square() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for layout in [SiteLayout::Uniform, SiteLayout::JitteredGrid] {
            let l = sample_locations(300, layout, &mut rng);
            assert_eq!(l.len(), 300);
            assert!(l.iter().all(|p| (0.0..=1.0).contains(&p[0]) && (0.0..=1.0).contains(&p[1])));
        }
    }

    #[test]
    fn truth_defaults_and_labels() {
        let mut d = ModelDesign::stationary(1.0);
        d.mean = vec!["sin_x".into()];
        d.nugget = true;
        let m = Model::new(d, &["sin_x".into()]).unwrap();
        let mut t = BTreeMap::new();
        t.insert("beta[sin_x]".to_string(), 0.7);
        let v = truth_vector(&m, &t).unwrap();
        assert_eq!(v, vec![0.0, 0.7, 0.0, DEFAULT_LOG_SCALE, DEFAULT_LOG_NUGGET]);
        t.insert("beta[cos_x]".to_string(), 1.0);
        assert!(matches!(truth_vector(&m, &t), Err(SynthError::UnknownLabel(_))));
    }

    #[test]
    fn holdout_geometry_marks_stripes_and_clusters() {
        let g = HoldoutGeometry::default();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let base = sample_locations(400, SiteLayout::Uniform, &mut rng);
        let (sites, mask) = g.apply(base.clone(), &mut rng);
        assert_eq!(sites.len(), 400 + 35);
        for (p, &m) in base.iter().zip(&mask) {
            if (0.30..0.33).contains(&p[0]) || (0.70..0.76).contains(&p[1]) {
                assert!(m);
            }
        }
        assert!(mask[400..].iter().all(|&m| m));
    }

    #[test]
    fn study_is_seeded() {
        let spec = SimulationSpec {
            n: 40,
            covariates: vec!["sin_x".into(), "noise".into()],
            holdout: HoldoutGeometry::default(),
            ..Default::default()
        };
        let mut d = ModelDesign::stationary(0.5);
        d.mean = spec.covariates.clone();
        let a = simulate_study(&spec, &d).unwrap();
        let b = simulate_study(&spec, &d).unwrap();
        assert_eq!(a, b);
        let names = spec.covariates.clone();
        assert_eq!(a.training(&names).unwrap().n() + a.holdout_set(&names).unwrap().n(), a.sites.n());
    }
}
