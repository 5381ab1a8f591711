//! Proper scoring rules, calibration diagnostics and k-means holdout reports.

use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;
use thiserror::Error;

const INV_SQRT_PI: f64 = 0.564_189_583_547_756_3;
const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;
const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_7;
/// Two-sided 95% standard normal quantile.
pub const Z975: f64 = 1.959_963_984_540_054;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ScoringError {
    #[error("predictive sd must be positive, got {sd} at index {index}")]
    NonPositiveSd { index: usize, sd: f64 },
    #[error("length mismatch: {0}")]
    Length(String),
    #[error("k = {k} exceeds the number of points {n}")]
    TooManyClusters { k: usize, n: usize },
    #[error("nothing to score")]
    Empty,
}

pub fn normal_cdf(u: f64) -> f64 {
    0.5 * erfc(-u / std::f64::consts::SQRT_2)
}

pub fn normal_pdf(u: f64) -> f64 {
    INV_SQRT_2PI * (-0.5 * u * u).exp()
}

/// CRPS of `N(mu, sigma^2)` at `z` (nonnegative loss).
pub fn crps_gaussian(z: f64, mu: f64, sigma: f64) -> Result<f64, ScoringError> {
    if !(sigma > 0.0) {
        return Err(ScoringError::NonPositiveSd { index: 0, sd: sigma });
    }
    let u = (z - mu) / sigma;
    Ok(sigma * (u * (2.0 * normal_cdf(u) - 1.0) + 2.0 * normal_pdf(u) - INV_SQRT_PI))
}

/// Negative log density of `N(mu, sigma^2)` at `z`.
pub fn logscore_gaussian(z: f64, mu: f64, sigma: f64) -> Result<f64, ScoringError> {
    if !(sigma > 0.0) {
        return Err(ScoringError::NonPositiveSd { index: 0, sd: sigma });
    }
    let u = (z - mu) / (std::f64::consts::SQRT_2 * sigma);
    Ok(LN_SQRT_2PI + u * u + sigma.ln())
}

/// Kolmogorov-Smirnov distance of the empirical CDF to the standard normal.
pub fn ks_statistic(residuals: &[f64]) -> Result<f64, ScoringError> {
    if residuals.is_empty() {
        return Err(ScoringError::Empty);
    }
    let mut r = residuals.to_vec();
    r.sort_by(f64::total_cmp);
    let n = r.len() as f64;
    Ok(r.iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = normal_cdf(x);
            ((i + 1) as f64 / n - f).max(f - i as f64 / n)
        })
        .fold(0.0, f64::max))
}

/// Fraction of `z` inside `mu +- z_{0.975} sd`.
pub fn coverage(z: &[f64], mu: &[f64], sd: &[f64]) -> Result<f64, ScoringError> {
    check_lengths(z, mu, sd)?;
    if z.is_empty() {
        return Err(ScoringError::Empty);
    }
    let inside = z.iter().zip(mu).zip(sd).filter(|((z, m), s)| (*z - *m).abs() <= Z975 * **s).count();
    Ok(inside as f64 / z.len() as f64)
}

fn check_lengths(z: &[f64], mu: &[f64], sd: &[f64]) -> Result<(), ScoringError> {
    if z.len() != mu.len() || z.len() != sd.len() {
        return Err(ScoringError::Length(format!("{} truths, {} means, {} sds", z.len(), mu.len(), sd.len())));
    }
    Ok(())
}

/// Type-7 sample quantile.
pub fn quantile(values: &[f64], q: f64) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let pos = q * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = (lo + 1).min(v.len() - 1);
    v[lo] + (pos - lo as f64) * (v[hi] - v[lo])
}

fn dist2(a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)
}

fn nearest(p: [f64; 2], centers: &[[f64; 2]]) -> usize {
    let mut best = (0, f64::INFINITY);
    for (c, &ctr) in centers.iter().enumerate() {
        let d = dist2(p, ctr);
        if d < best.1 {
            best = (c, d);
        }
    }
    best.0
}

/// Lloyd's algorithm on coordinates with k-means++ seeding (100 iterations).
pub fn cluster_holdout(locations: &[[f64; 2]], k: usize, seed: u64) -> Result<Vec<usize>, ScoringError> {
    let n = locations.len();
    if k > n {
        return Err(ScoringError::TooManyClusters { k, n });
    }
    if k == 0 {
        return Err(ScoringError::Empty);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centers = vec![locations[rng.random_range(0..n)]];
    let mut d2: Vec<f64> = locations.iter().map(|&p| dist2(p, centers[0])).collect();
    while centers.len() < k {
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut pick = n - 1;
            for (i, &w) in d2.iter().enumerate() {
                if w > 0.0 && target < w {
                    pick = i;
                    break;
                }
                target -= w;
            }
            while d2[pick] == 0.0 {
                pick -= 1;
            }
            pick
        } else {
            rng.random_range(0..n)
        };
        centers.push(locations[next]);
        for (i, &p) in locations.iter().enumerate() {
            d2[i] = d2[i].min(dist2(p, locations[next]));
        }
    }
    let mut labels: Vec<usize> = locations.iter().map(|&p| nearest(p, &centers)).collect();
    for _ in 0..100 {
        let mut sums = vec![[0.0, 0.0, 0.0]; k];
        for (&l, p) in labels.iter().zip(locations) {
            sums[l][0] += p[0];
            sums[l][1] += p[1];
            sums[l][2] += 1.0;
        }
        for (c, s) in centers.iter_mut().zip(&sums) {
            if s[2] > 0.0 {
                *c = [s[0] / s[2], s[1] / s[2]];
            }
        }
        let next: Vec<usize> = locations.iter().map(|&p| nearest(p, &centers)).collect();
        if next == labels {
            break;
        }
        labels = next;
    }
    Ok(labels)
}

/// Scores of one group of holdout points.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub n: usize,
    pub rmspe: f64,
    pub crps: f64,
    pub crps_q95: f64,
    pub logscore: f64,
    pub ks: f64,
    pub cpi: f64,
}

pub const METRIC_NAMES: [&str; 6] = ["RMSPE", "CRPS", "q0.95 CRPS", "Log-Score", "D_n", "CPI"];

impl Metrics {
    pub fn compute(z: &[f64], mu: &[f64], sd: &[f64]) -> Result<Self, ScoringError> {
        check_lengths(z, mu, sd)?;
        if z.is_empty() {
            return Err(ScoringError::Empty);
        }
        let n = z.len();
        let mut crps = Vec::with_capacity(n);
        let mut logs = Vec::with_capacity(n);
        let mut std_resid = Vec::with_capacity(n);
        for i in 0..n {
            if !(sd[i] > 0.0) {
                return Err(ScoringError::NonPositiveSd { index: i, sd: sd[i] });
            }
            crps.push(crps_gaussian(z[i], mu[i], sd[i])?);
            logs.push(logscore_gaussian(z[i], mu[i], sd[i])?);
            std_resid.push((z[i] - mu[i]) / sd[i]);
        }
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        let mse = z.iter().zip(mu).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / n as f64;
        Ok(Self {
            n,
            rmspe: mse.sqrt(),
            crps: mean(&crps),
            crps_q95: quantile(&crps, 0.95),
            logscore: mean(&logs),
            ks: ks_statistic(&std_resid)?,
            cpi: coverage(z, mu, sd)?,
        })
    }

    pub fn values(&self) -> [f64; 6] {
        [self.rmspe, self.crps, self.crps_q95, self.logscore, self.ks, self.cpi]
    }
}

/// Mean over clusters and the sample sd of the per-cluster values.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub name: String,
    pub mean: f64,
    /// Absent with fewer than two clusters.
    pub se: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoreReport {
    pub k: usize,
    pub seed: u64,
    pub clusters: Vec<Option<Metrics>>,
    pub aggregate: Vec<Aggregate>,
    /// q0.95 of pointwise CRPS over every holdout point.
    pub crps_q95_pointwise: f64,
    pub notes: Vec<String>,
}

/// Per-cluster metrics and their between-cluster summaries.
pub fn score_report(
    z: &[f64],
    mu: &[f64],
    sd: &[f64],
    labels: &[usize],
    k: usize,
    seed: u64,
) -> Result<ScoreReport, ScoringError> {
    check_lengths(z, mu, sd)?;
    if labels.len() != z.len() {
        return Err(ScoringError::Length(format!("{} labels for {} points", labels.len(), z.len())));
    }
    Metrics::compute(z, mu, sd)?;
    let mut clusters = Vec::with_capacity(k);
    let mut notes = Vec::new();
    for c in 0..k {
        let idx: Vec<usize> = (0..z.len()).filter(|&i| labels[i] == c).collect();
        if idx.is_empty() {
            notes.push(format!("cluster {c} is empty and was skipped"));
            clusters.push(None);
            continue;
        }
        let pick = |v: &[f64]| idx.iter().map(|&i| v[i]).collect::<Vec<f64>>();
        clusters.push(Some(Metrics::compute(&pick(z), &pick(mu), &pick(sd))?));
    }
    let present: Vec<&Metrics> = clusters.iter().flatten().collect();
    let aggregate = METRIC_NAMES
        .iter()
        .enumerate()
        .map(|(j, name)| {
            let vals: Vec<f64> = present.iter().map(|m| m.values()[j]).collect();
            let mean = vals.iter().sum::<f64>() / vals.len() as f64;
            let se = (vals.len() > 1)
                .then(|| (vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (vals.len() - 1) as f64).sqrt());
            Aggregate { name: name.to_string(), mean, se }
        })
        .collect();
    let crps: Vec<f64> = (0..z.len()).map(|i| crps_gaussian(z[i], mu[i], sd[i])).collect::<Result<_, _>>()?;
    Ok(ScoreReport { k, seed, clusters, aggregate, crps_q95_pointwise: quantile(&crps, 0.95), notes })
}

impl ScoreReport {
    /// Plain-text table: one row per metric, `mean (se)`.
    pub fn table(&self, model: &str) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{:<12} {}", "metric", model);
        for a in &self.aggregate {
            let cell = match a.se {
                Some(se) => format!("{:.4} ({:.4})", a.mean, se),
                None => format!("{:.4}", a.mean),
            };
            let _ = writeln!(s, "{:<12} {}", a.name, cell);
        }
        let _ = writeln!(s, "{:<12} {:.4}", "q0.95 CRPS*", self.crps_q95_pointwise);
        s
    }
}
