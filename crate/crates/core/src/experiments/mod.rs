//! Seeded desk-scale studies that write CSV and JSON artifacts.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::pipeline::PipelineError;

pub mod fig3;
pub mod fig6;
pub mod nested;

#[derive(Debug, Error)]
pub enum StudyError {
    #[error("unknown study '{0}'; expected fig3_covariate_pathologies, fig6_regularization_path or nested_model_check")]
    UnknownStudy(String),
    #[error("replicates must be at least 1")]
    NoReplicates,
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
    #[error("{0}")]
    Numerical(String),
}

impl StudyError {
    pub fn exit_code(&self) -> i32 {
        match self {
            StudyError::UnknownStudy(_) | StudyError::NoReplicates => 2,
            StudyError::Pipeline(e) => e.exit_code(),
            StudyError::Numerical(_) => 4,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StudyId {
    Fig3CovariatePathologies,
    Fig6RegularizationPath,
    NestedModelCheck,
}

impl StudyId {
    pub fn name(self) -> &'static str {
        match self {
            StudyId::Fig3CovariatePathologies => "fig3_covariate_pathologies",
            StudyId::Fig6RegularizationPath => "fig6_regularization_path",
            StudyId::NestedModelCheck => "nested_model_check",
        }
    }

    pub fn default_replicates(self) -> usize {
        match self {
            StudyId::Fig3CovariatePathologies => 500,
            StudyId::Fig6RegularizationPath => 1,
            StudyId::NestedModelCheck => 10,
        }
    }
}

impl fmt::Display for StudyId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for StudyId {
    type Err = StudyError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "fig3_covariate_pathologies" | "fig3" => Ok(StudyId::Fig3CovariatePathologies),
            "fig6_regularization_path" | "fig6" => Ok(StudyId::Fig6RegularizationPath),
            "nested_model_check" | "nested" => Ok(StudyId::NestedModelCheck),
            other => Err(StudyError::UnknownStudy(other.to_string())),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StudySpec {
    pub id: StudyId,
    pub replicates: usize,
    pub seed: u64,
    pub out: PathBuf,
}

impl StudySpec {
    pub fn new(id: StudyId, out: impl Into<PathBuf>) -> Self {
        Self { id, replicates: id.default_replicates(), seed: 1, out: out.into() }
    }
}

/// Runs the study, writes its artifacts and returns a one-paragraph summary.
pub fn run_study(spec: &StudySpec) -> Result<String, StudyError> {
    if spec.replicates == 0 {
        return Err(StudyError::NoReplicates);
    }
    std::fs::create_dir_all(&spec.out).map_err(|source| io(&spec.out, source))?;
    match spec.id {
        StudyId::Fig3CovariatePathologies => {
            let r = fig3::run(&fig3::Fig3Config::default(), spec.replicates, spec.seed)?;
            r.write(&spec.out)?;
            Ok(r.summary.describe())
        }
        StudyId::Fig6RegularizationPath => {
            let r = fig6::run(&fig6::Fig6Config::default(), spec.replicates, spec.seed)?;
            r.write(&spec.out)?;
            Ok(r.summary.describe())
        }
        StudyId::NestedModelCheck => {
            let r = nested::run(&nested::NestedConfig::default(), spec.replicates, spec.seed)?;
            r.write(&spec.out)?;
            Ok(r.summary.describe())
        }
    }
}

pub(crate) fn io(path: &Path, source: std::io::Error) -> StudyError {
    StudyError::Pipeline(PipelineError::Io { path: path.display().to_string(), source })
}

/// Seed of replicate `r`: the first draw of ChaCha stream `r` under `seed`,
/// so replicate sets of different seeds do not overlap.
pub fn replicate_seed(seed: u64, r: usize) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(r as u64);
    rng.next_u64()
}

/// Pearson correlation.
pub fn correlation(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    sab / (saa * sbb).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn study_ids_parse() {
        for id in [StudyId::Fig3CovariatePathologies, StudyId::Fig6RegularizationPath, StudyId::NestedModelCheck] {
            assert_eq!(id.name().parse::<StudyId>().unwrap(), id);
        }
        assert!(matches!("fig9".parse::<StudyId>(), Err(StudyError::UnknownStudy(_))));
    }

    #[test]
    fn replicate_seeds_differ() {
        let a: Vec<u64> = (0..50).map(|r| replicate_seed(1, r)).collect();
        let b: Vec<u64> = (0..50).map(|r| replicate_seed(2, r)).collect();
        assert!(a.iter().all(|x| !b.contains(x)));
        assert_eq!(a, (0..50).map(|r| replicate_seed(1, r)).collect::<Vec<_>>());
    }

    #[test]
    fn correlation_examples() {
        assert!((correlation(&[1.0, 2.0, 3.0], &[2.0, 4.0, 6.0]) - 1.0).abs() < 1e-15);
        assert!((correlation(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]) + 1.0).abs() < 1e-15);
        assert!(correlation(&[1.0, -1.0, 1.0, -1.0], &[1.0, 1.0, -1.0, -1.0]).abs() < 1e-15);
    }
}
