//! Kriging predictions and seeded simulation.

use faer::Mat;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{Sites, SpatialDataset};
use crate::likelihood::{Likelihood, LikelihoodError, ObjectiveKind};
use crate::linalg::{factorize_with_rescue, CholeskyFactor, LinalgError, SpdMatrix};
use crate::model::{Model, ModelError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PredictError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Likelihood(#[from] LikelihoodError),
    #[error("predictive variance {value:e} at site {site} is negative beyond rounding")]
    NegativeVariance { site: usize, value: f64 },
}

impl From<LinalgError> for PredictError {
    fn from(e: LinalgError) -> Self {
        PredictError::Likelihood(e.into())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PredictOptions {
    /// Add the nugget variance to the predictive sd.
    pub include_nugget: bool,
    pub full_covariance: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PredictiveDistribution {
    pub mean: Vec<f64>,
    pub sd: Vec<f64>,
    pub covariance: Option<Mat<f64>>,
    pub include_nugget: bool,
}

/// Conditional Gaussian prediction at `new` given `data` under `natural`;
/// the taper, when present, applies to both the training covariance and the
/// cross-covariance.
pub fn krige(
    model: &Model,
    data: &SpatialDataset,
    natural: &[f64],
    new: &Sites,
    options: &PredictOptions,
) -> Result<PredictiveDistribution, PredictError> {
    model.check(natural, new)?;
    let lik = Likelihood::new(model, data, ObjectiveKind::Loglik)?;
    let (factor, _) = lik.factor(natural)?;
    let train_mean = model.mean(natural, &data.sites);
    let r: Vec<f64> = data.response.iter().zip(&train_mean).map(|(z, m)| z - m).collect();
    let tapered = model.is_tapered();
    let k = model.cross_covariance(natural, new, &data.sites, tapered)?;
    let (m, n) = (new.n(), data.n());

    // Dense: v = L^{-1} K', u = L^{-1} r. Sparse: v = A^{-1} K', u = r.
    let kt = Mat::<f64>::from_fn(n, m, |i, p| k[(p, i)]);
    let mut v = kt.clone();
    let (u, sparse) = match factor.as_ref() {
        CholeskyFactor::Dense(f) => {
            f.solve_lower_mat(v.as_mut());
            (f.solve_lower(&r), false)
        }
        CholeskyFactor::Sparse(f) => {
            f.solve_mat(v.as_mut());
            (r, true)
        }
    };
    let partner = if sparse { &kt } else { &v };
    let prior_mean = model.mean(natural, new);
    let sigma2 = model.marginal_variance(natural, new);
    let nugget = if options.include_nugget { model.nugget_variance(natural) } else { 0.0 };
    let mut mean = Vec::with_capacity(m);
    let mut sd = Vec::with_capacity(m);
    for p in 0..m {
        let col = v.col(p);
        let shift: f64 = (0..n).map(|i| col[i] * u[i]).sum();
        let explained: f64 = (0..n).map(|i| col[i] * partner[(i, p)]).sum();
        mean.push(prior_mean[p] + shift);
        let var = sigma2[p] - explained;
        let var = if var >= 0.0 {
            var
        } else if var >= -1e-8 * sigma2[p].max(1.0) {
            0.0
        } else {
            return Err(PredictError::NegativeVariance { site: p, value: var });
        };
        sd.push((var + nugget).sqrt());
    }
    let covariance = if options.full_covariance {
        let prior = model.cross_covariance(natural, new, new, tapered)?;
        Some(Mat::from_fn(m, m, |p, q| {
            if p == q {
                sd[p] * sd[p]
            } else {
                prior[(p, q)] - (0..n).map(|i| v[(i, p)] * partner[(i, q)]).sum::<f64>()
            }
        }))
    } else {
        None
    };
    Ok(PredictiveDistribution { mean, sd, covariance, include_nugget: options.include_nugget })
}

/// Seeded draw `X beta + L u + nugget noise` from the untapered model.
/// Returns the draw and whether diagonal jitter was needed.
pub fn simulate(model: &Model, sites: &Sites, natural: &[f64], seed: u64) -> Result<(Vec<f64>, bool), PredictError> {
    let mut sigma = SpdMatrix::Dense(model.covariance_dense(natural, sites, false)?);
    let (factor, jittered) = factorize_with_rescue(&mut sigma, true)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = sites.n();
    let u: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();
    let CholeskyFactor::Dense(f) = factor else { unreachable!("dense covariance gives a dense factor") };
    let lu = f.lower_mul(&u);
    let mean = model.mean(natural, sites);
    let tau = model.nugget_variance(natural).sqrt();
    let z = (0..n)
        .map(|i| {
            let e: f64 = StandardNormal.sample(&mut rng);
            mean[i] + lu[i] + if tau > 0.0 { tau * e } else { 0.0 }
        })
        .collect();
    Ok((z, jittered))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::covkernel::{TaperFamily, TaperSpec};
    use crate::design::ModelDesign;
    use nalgebra::{DMatrix, DVector};

    fn sites(n: usize, shift: f64) -> Sites {
        let locations: Vec<[f64; 2]> =
            (0..n).map(|k| [((k * 37 + 11) % 97) as f64 / 97.0 + shift, ((k * 61 + 5) % 89) as f64 / 89.0]).collect();
        let c: Vec<f64> = locations.iter().map(|l| (3.0 * l[0]).sin()).collect();
        Sites::new(locations, vec![c]).unwrap()
    }

    fn model(nugget: bool) -> Model {
        let mut d = ModelDesign::stationary(1.0);
        d.mean = vec!["c".into()];
        d.std_dev = vec!["c".into()];
        d.scale = vec!["c".into()];
        d.nugget = nugget;
        Model::new(d, &["c".into()]).unwrap()
    }

    fn data(m: &Model, theta: &[f64], n: usize) -> SpatialDataset {
        let s = sites(n, 0.0);
        let (z, _) = simulate(m, &s, theta, 7).unwrap();
        SpatialDataset::standardized(s, z, &["c".into()]).unwrap()
    }

    const THETA: [f64; 6] = [0.3, 0.5, 0.1, 0.3, -1.5, 0.2];

    #[test]
    fn interpolates_training_sites() {
        let m = model(false);
        let d = data(&m, &THETA, 40);
        let p = krige(&m, &d, &THETA, &d.sites, &PredictOptions::default()).unwrap();
        for i in 0..40 {
            assert!((p.mean[i] - d.response[i]).abs() < 1e-8);
            assert!(p.sd[i] < 1e-4);
        }
    }

    #[test]
    fn far_sites_revert_to_prior() {
        let m = model(false);
        let d = data(&m, &THETA, 30);
        let far = sites(5, 1e4);
        let p = krige(&m, &d, &THETA, &far, &PredictOptions::default()).unwrap();
        let mu = m.mean(&THETA, &far);
        for i in 0..5 {
            assert!((p.mean[i] - mu[i]).abs() < 1e-12);
            assert!((p.sd[i] - m.sigma_at(&THETA, &far, i)).abs() < 1e-12);
        }
    }

    #[test]
    fn matches_explicit_linear_algebra() {
        let m = model(true);
        let theta = [0.3, 0.5, 0.1, 0.3, -1.5, 0.2, -2.0];
        let d = data(&m, &theta, 3);
        let new = sites(2, 0.013);
        let p = krige(&m, &d, &theta, &new, &PredictOptions { include_nugget: true, full_covariance: true }).unwrap();
        let sz = m.covariance_dense(&theta, &d.sites, true).unwrap();
        let a = DMatrix::from_fn(3, 3, |i, j| sz.get(i, j));
        let k = m.cross_covariance(&theta, &new, &d.sites, false).unwrap();
        let kp = DMatrix::from_fn(2, 3, |i, j| k[(i, j)]);
        let mu = m.mean(&theta, &d.sites);
        let r = DVector::from_fn(3, |i, _| d.response[i] - mu[i]);
        let inv = a.try_inverse().unwrap();
        let mean = &kp * &inv * &r;
        let cov = -(&kp * &inv * kp.transpose());
        let mp = m.mean(&theta, &new);
        let tau = (-2.0f64).exp();
        for i in 0..2 {
            assert!((p.mean[i] - mp[i] - mean[i]).abs() < 1e-10);
            let var = m.sigma_at(&theta, &new, i).powi(2) + cov[(i, i)] + tau;
            assert!((p.sd[i] - var.sqrt()).abs() < 1e-10);
        }
        let full = p.covariance.unwrap();
        let prior = m.cross_covariance(&theta, &new, &new, false).unwrap();
        assert!((full[(0, 1)] - (prior[(0, 1)] + cov[(0, 1)])).abs() < 1e-10);
    }

    #[test]
    fn tapered_with_huge_radius_matches_dense() {
        let mut dense = ModelDesign::stationary(1.0);
        dense.mean = vec!["c".into()];
        dense.scale = vec!["c".into()];
        let mut tapered = dense.clone();
        tapered.taper = TaperSpec::new(TaperFamily::Wendland1, 1e6).unwrap();
        let md = Model::new(dense, &["c".into()]).unwrap();
        let mt = Model::new(tapered, &["c".into()]).unwrap();
        let theta = [0.1, 0.4, 0.2, -1.4, 0.3];
        let d = data(&md, &theta, 60);
        let new = sites(10, 0.004);
        let a = krige(&md, &d, &theta, &new, &PredictOptions::default()).unwrap();
        let b = krige(&mt, &d, &theta, &new, &PredictOptions::default()).unwrap();
        for i in 0..10 {
            assert!((a.mean[i] - b.mean[i]).abs() < 1e-8 && (a.sd[i] - b.sd[i]).abs() < 1e-8);
        }
    }

    #[test]
    fn simulation_is_seeded() {
        let m = model(true);
        let theta = [0.3, 0.5, 0.1, 0.3, -1.5, 0.2, -2.0];
        let s = sites(20, 0.0);
        assert_eq!(simulate(&m, &s, &theta, 3).unwrap(), simulate(&m, &s, &theta, 3).unwrap());
        assert_ne!(simulate(&m, &s, &theta, 3).unwrap().0, simulate(&m, &s, &theta, 4).unwrap().0);
    }

    #[test]
    fn vanishing_covariance_gives_mean() {
        let m = model(false);
        let theta = [0.3, 0.5, -40.0, 0.0, -1.5, 0.0];
        let s = sites(10, 0.0);
        let (z, _) = simulate(&m, &s, &theta, 1).unwrap();
        let mu = m.mean(&theta, &s);
        for i in 0..10 {
            assert!((z[i] - mu[i]).abs() < 1e-7);
        }
    }
}
