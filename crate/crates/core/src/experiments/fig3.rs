//! One-dimensional realizations driven by ordinal, smooth and noisy
//! covariates, all built from the same white noise.

use std::fmt::Write as _;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{correlation, io, replicate_seed, StudyError};
use crate::covkernel::{cov_sparse, scalar_prefactor, MaternConvention, ScalarKernel};
use crate::data::fmt_f64;
use crate::linalg::{factorize_with_rescue, CholeskyFactor, DenseSpd, SpdMatrix};
use crate::pipeline::to_json;

/// Study constants on the domain `[0, length]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Fig3Config {
    pub length: f64,
    /// Grid points sit at `spacing / 2 + k spacing`.
    pub spacing: f64,
    pub rho_low: f64,
    pub rho_high: f64,
    pub nu: f64,
    /// Single jump location of the one-jump scenario.
    pub jump: f64,
    /// Level alternation period of the multi-jump scenario.
    pub period: f64,
    /// Sd of the noise added to the smooth covariate, in covariate units.
    pub noise_sd: f64,
    /// Half-distance of the site pair straddling each boundary.
    pub pair_offset: f64,
    /// Realizations written per scenario.
    pub stored: usize,
}

impl Default for Fig3Config {
    fn default() -> Self {
        Self {
            length: 50.0,
            spacing: 0.1,
            rho_low: 1.0,
            rho_high: 10.0,
            nu: 1.0,
            jump: 25.0,
            period: 5.0,
            noise_sd: 0.3,
            pair_offset: 1e-4,
            stored: 5,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scenario {
    OneJump,
    MultiJump,
    Smooth,
    Noisy,
}

impl Scenario {
    pub const ALL: [Scenario; 4] = [Scenario::OneJump, Scenario::MultiJump, Scenario::Smooth, Scenario::Noisy];

    pub fn name(self) -> &'static str {
        match self {
            Scenario::OneJump => "one_jump",
            Scenario::MultiJump => "multi_jump",
            Scenario::Smooth => "smooth",
            Scenario::Noisy => "noisy",
        }
    }

    pub fn is_ordinal(self) -> bool {
        matches!(self, Scenario::OneJump | Scenario::MultiJump)
    }
}

impl Fig3Config {
    /// Level boundaries of the multi-jump scenario; they include `jump`.
    pub fn boundaries(&self) -> Vec<f64> {
        let k = (self.length / self.period).round() as usize;
        (1..k).map(|i| i as f64 * self.period).collect()
    }

    /// Sorted sites: the grid plus one pair around every boundary.
    pub fn sites(&self) -> Vec<f64> {
        let m = (self.length / self.spacing).round() as usize;
        let mut x: Vec<f64> = (0..m).map(|k| (k as f64 + 0.5) * self.spacing).collect();
        for b in self.boundaries() {
            x.push(b - self.pair_offset);
            x.push(b + self.pair_offset);
        }
        x.sort_by(f64::total_cmp);
        x
    }

    /// Covariate in `[0, 1]` (before noise); `rho = rho_low (rho_high/rho_low)^c`.
    pub fn covariate(&self, scenario: Scenario, x: f64, noise: f64) -> f64 {
        match scenario {
            Scenario::OneJump => f64::from(x >= self.jump),
            Scenario::MultiJump => ((x / self.period).floor() as i64 % 2) as f64,
            Scenario::Smooth => x / self.length,
            Scenario::Noisy => x / self.length + self.noise_sd * noise,
        }
    }

    pub fn rho(&self, c: f64) -> f64 {
        self.rho_low * (self.rho_high / self.rho_low).powf(c)
    }
}

/// Correlation across one site pair.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairResult {
    pub scenario: Scenario,
    pub boundary: f64,
    pub rho_left: f64,
    pub rho_right: f64,
    pub prefactor: f64,
    /// Model correlation at the pair distance.
    pub expected: f64,
    pub measured: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Fig3Summary {
    pub replicates: usize,
    pub seed: u64,
    pub cap: f64,
    /// Mean measured correlation over the pairs of both ordinal scenarios.
    pub pooled_ordinal: f64,
    pub ordinal_pairs: usize,
    pub pooled_smooth: f64,
    pub jittered: Vec<bool>,
}

impl Fig3Summary {
    pub fn describe(&self) -> String {
        format!(
            "fig3: cross-level cap {:.4}, pooled ordinal correlation {:.4} over {} pairs and {} replicates; smooth covariate pairs {:.4}",
            self.cap, self.pooled_ordinal, self.ordinal_pairs, self.replicates, self.pooled_smooth
        )
    }
}

#[derive(Clone, Debug)]
pub struct Fig3Result {
    pub config: Fig3Config,
    pub sites: Vec<f64>,
    /// Covariate, rho and stored realizations per scenario.
    pub covariates: Vec<Vec<f64>>,
    pub realizations: Vec<Vec<Vec<f64>>>,
    pub pairs: Vec<PairResult>,
    pub summary: Fig3Summary,
}

fn kernel(cfg: &Fig3Config, c: f64) -> ScalarKernel {
    ScalarKernel { sigma: 1.0, rho: cfg.rho(c), nu: cfg.nu }
}

pub fn run(cfg: &Fig3Config, replicates: usize, seed: u64) -> Result<Fig3Result, StudyError> {
    let x = cfg.sites();
    let n = x.len();
    let mut noise_rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_f163);
    let noise: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut noise_rng)).collect();
    let conv = MaternConvention::Sqrt8Nu;

    let mut covariates = Vec::new();
    let mut factors = Vec::new();
    let mut jittered = Vec::new();
    for s in Scenario::ALL {
        let c: Vec<f64> = (0..n).map(|i| cfg.covariate(s, x[i], noise[i])).collect();
        let k: Vec<ScalarKernel> = c.iter().map(|&v| kernel(cfg, v)).collect();
        let mut err = None;
        let dense = DenseSpd::from_lower_fn(n, |i, j| {
            cov_sparse((x[i] - x[j]).abs(), &k[i], &k[j], conv).unwrap_or_else(|e| {
                err = Some(e.to_string());
                f64::NAN
            })
        });
        if let Some(e) = err {
            return Err(StudyError::Numerical(e));
        }
        let mut m = SpdMatrix::Dense(dense);
        let (f, j) = factorize_with_rescue(&mut m, true).map_err(|e| StudyError::Numerical(e.to_string()))?;
        let CholeskyFactor::Dense(f) = f else { unreachable!("dense matrix gives a dense factor") };
        factors.push(f);
        jittered.push(j);
        covariates.push(c);
    }

    // Pair (left, right) indices for every boundary.
    let pair_idx: Vec<(f64, usize, usize)> = cfg
        .boundaries()
        .into_iter()
        .map(|b| {
            let l = x.iter().position(|&v| v == b - cfg.pair_offset).expect("pair site present");
            (b, l, l + 1)
        })
        .collect();

    // Per replicate: pair values per scenario and the stored realizations.
    let draws: Vec<(Vec<Vec<(f64, f64)>>, Option<Vec<Vec<f64>>>)> = (0..replicates)
        .into_par_iter()
        .map(|r| {
            let mut rng = ChaCha8Rng::seed_from_u64(replicate_seed(seed, r));
            let u: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();
            let z: Vec<Vec<f64>> = factors.iter().map(|f| f.lower_mul(&u)).collect();
            let pv = z.iter().map(|zs| pair_idx.iter().map(|&(_, l, rr)| (zs[l], zs[rr])).collect()).collect();
            (pv, (r < cfg.stored).then_some(z))
        })
        .collect();

    let mut pairs = Vec::new();
    for (si, &s) in Scenario::ALL.iter().enumerate() {
        let relevant: Vec<usize> = match s {
            Scenario::OneJump => vec![pair_idx.iter().position(|p| p.0 == cfg.jump).expect("jump is a boundary")],
            _ => (0..pair_idx.len()).collect(),
        };
        for pi in relevant {
            let (b, l, rr) = pair_idx[pi];
            let a: Vec<f64> = draws.iter().map(|d| d.0[si][pi].0).collect();
            let bb: Vec<f64> = draws.iter().map(|d| d.0[si][pi].1).collect();
            let kl = kernel(cfg, covariates[si][l]);
            let kr = kernel(cfg, covariates[si][rr]);
            let expected = cov_sparse(x[rr] - x[l], &kl, &kr, conv).map_err(|e| StudyError::Numerical(e.to_string()))?;
            pairs.push(PairResult {
                scenario: s,
                boundary: b,
                rho_left: kl.rho,
                rho_right: kr.rho,
                prefactor: scalar_prefactor(kl.rho, kr.rho),
                expected,
                measured: correlation(&a, &bb),
            });
        }
    }
    let mean_of = |pred: &dyn Fn(&PairResult) -> bool| {
        let v: Vec<f64> = pairs.iter().filter(|p| pred(p)).map(|p| p.measured).collect();
        (v.iter().sum::<f64>() / v.len() as f64, v.len())
    };
    let (pooled_ordinal, ordinal_pairs) = mean_of(&|p| p.scenario.is_ordinal());
    let (pooled_smooth, _) = mean_of(&|p| p.scenario == Scenario::Smooth);
    let realizations = (0..Scenario::ALL.len())
        .map(|si| draws.iter().filter_map(|d| d.1.as_ref().map(|z| z[si].clone())).collect())
        .collect();
    Ok(Fig3Result {
        config: cfg.clone(),
        sites: x,
        covariates,
        realizations,
        pairs,
        summary: Fig3Summary {
            replicates,
            seed,
            cap: scalar_prefactor(cfg.rho_low, cfg.rho_high),
            pooled_ordinal,
            ordinal_pairs,
            pooled_smooth,
            jittered,
        },
    })
}

impl Fig3Result {
    /// Writes `fig3_<scenario>.csv`, `fig3_pairs.csv` and `fig3_summary.json`.
    pub fn write(&self, dir: &Path) -> Result<(), StudyError> {
        for (si, s) in Scenario::ALL.iter().enumerate() {
            let reals = &self.realizations[si];
            let mut t = String::from("x,covariate,rho");
            for r in 0..reals.len() {
                let _ = write!(t, ",z{}", r + 1);
            }
            t.push('\n');
            for (i, &xi) in self.sites.iter().enumerate() {
                let c = self.covariates[si][i];
                let _ = write!(t, "{},{},{}", fmt_f64(xi), fmt_f64(c), fmt_f64(self.config.rho(c)));
                for z in reals {
                    let _ = write!(t, ",{}", fmt_f64(z[i]));
                }
                t.push('\n');
            }
            let path = dir.join(format!("fig3_{}.csv", s.name()));
            std::fs::write(&path, t).map_err(|e| io(&path, e))?;
        }
        let mut t = String::from("scenario,boundary,rho_left,rho_right,prefactor,expected,measured\n");
        for p in &self.pairs {
            let _ = writeln!(
                t,
                "{},{},{},{},{},{},{}",
                p.scenario.name(),
                fmt_f64(p.boundary),
                fmt_f64(p.rho_left),
                fmt_f64(p.rho_right),
                fmt_f64(p.prefactor),
                fmt_f64(p.expected),
                fmt_f64(p.measured)
            );
        }
        let path = dir.join("fig3_pairs.csv");
        std::fs::write(&path, t).map_err(|e| io(&path, e))?;
        let path = dir.join("fig3_summary.json");
        std::fs::write(&path, to_json(&(&self.config, &self.summary))).map_err(|e| io(&path, e))
    }
}
