use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use super::bessel::ln_bessel_k;
use super::KernelError;

/// Largest smoothness accepted by the Matérn evaluator.
pub const NU_CEILING: f64 = 50.0;

/// How the distance enters the Bessel argument.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaternConvention {
    /// `sqrt(8 nu) h / gamma`; correlation near 0.1 at `h = gamma`.
    #[default]
    Sqrt8Nu,
    /// `h / gamma`, as used by most other geostatistics packages.
    Plain,
}

impl MaternConvention {
    #[inline]
    pub fn argument(self, h: f64, gamma: f64, nu: f64) -> f64 {
        match self {
            MaternConvention::Sqrt8Nu => (8.0 * nu).sqrt() * h / gamma,
            MaternConvention::Plain => h / gamma,
        }
    }
}

/// Matérn correlation `2^{1-nu}/Gamma(nu) t^nu K_nu(t)` at `t = sqrt(8 nu) h / gamma`.
pub fn matern_correlation(h: f64, gamma: f64, nu: f64) -> Result<f64, KernelError> {
    matern_correlation_with(h, gamma, nu, MaternConvention::Sqrt8Nu)
}

pub fn matern_correlation_with(
    h: f64,
    gamma: f64,
    nu: f64,
    convention: MaternConvention,
) -> Result<f64, KernelError> {
    if !h.is_finite() || !gamma.is_finite() || !nu.is_finite() {
        return Err(KernelError::NonFinite("matern argument"));
    }
    if h < 0.0 {
        return Err(KernelError::Domain(format!("distance must be nonnegative, got {h}")));
    }
    if gamma <= 0.0 {
        return Err(KernelError::Domain(format!("scale must be positive, got {gamma}")));
    }
    check_nu(nu)?;
    Ok(matern_at(convention.argument(h, gamma, nu), nu))
}

pub(crate) fn check_nu(nu: f64) -> Result<(), KernelError> {
    if !nu.is_finite() || nu <= 0.0 {
        return Err(KernelError::Domain(format!("smoothness must be positive, got {nu}")));
    }
    if nu > NU_CEILING {
        return Err(KernelError::Domain(format!(
            "smoothness {nu} exceeds the supported ceiling {NU_CEILING}"
        )));
    }
    Ok(())
}

/// Correlation at a precomputed Bessel argument `t >= 0`; no validation.
#[inline]
pub(crate) fn matern_at(t: f64, nu: f64) -> f64 {
    if t == 0.0 {
        return 1.0;
    }
    if nu == 0.5 {
        return (-t).exp();
    }
    if nu == 1.5 {
        return (1.0 + t) * (-t).exp();
    }
    if nu == 2.5 {
        return (1.0 + t + t * t / 3.0) * (-t).exp();
    }
    let ln = (1.0 - nu) * std::f64::consts::LN_2 - ln_gamma(nu) + nu * t.ln() + ln_bessel_k(nu, t);
    ln.exp().min(1.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn half_integer_closed_forms_match_bessel() {
        for nu in [0.5, 1.5, 2.5] {
            for t in [1e-6, 0.01, 0.3, 1.0, 4.0, 20.0] {
                let general = ((1.0 - nu) * std::f64::consts::LN_2 - ln_gamma(nu) + nu * f64::ln(t) + ln_bessel_k(nu, t)).exp();
                assert!((matern_at(t, nu) - general).abs() < 1e-12, "nu {nu} t {t}");
            }
        }
    }

    #[test]
    fn origin_is_one() {
        assert_eq!(matern_correlation(0.0, 1.0, 1.3).unwrap(), 1.0);
    }

    #[test]
    fn exponential_special_case() {
        let v = matern_correlation(1.0, 1.0, 0.5).unwrap();
        assert!((v - (-2.0f64).exp()).abs() < 1e-14);
        assert!((v - 0.135_335).abs() < 1e-6);
    }

    #[test]
    fn three_halves_closed_form() {
        let a = 12f64.sqrt();
        let exact = (1.0 + a) * (-a).exp();
        let v = matern_correlation(1.0, 1.0, 1.5).unwrap();
        assert!((v - exact).abs() < 1e-14);
        assert!((v - 0.139_731).abs() < 1e-6);
    }

    #[test]
    fn five_halves_closed_form_over_range() {
        for i in 1..200 {
            let h = i as f64 * 0.05;
            let a = (8.0 * 2.5f64).sqrt() * h / 1.7;
            let exact = (1.0 + a + a * a / 3.0) * (-a).exp();
            let v = matern_correlation(h, 1.7, 2.5).unwrap();
            assert!((v - exact).abs() < 1e-13, "h={h}");
        }
    }

    #[test]
    fn plain_convention_drops_sqrt8nu() {
        let v = matern_correlation_with(1.0, 1.0, 0.5, MaternConvention::Plain).unwrap();
        assert!((v - (-1.0f64).exp()).abs() < 1e-14);
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(matern_correlation(f64::NAN, 1.0, 1.0).is_err());
        assert!(matern_correlation(1.0, f64::INFINITY, 1.0).is_err());
        assert!(matern_correlation(-1.0, 1.0, 1.0).is_err());
        assert!(matern_correlation(1.0, 0.0, 1.0).is_err());
        assert!(matern_correlation(1.0, 1.0, 0.0).is_err());
        assert!(matern_correlation(1.0, 1.0, 50.5).is_err());
        assert!(matern_correlation(1.0, 1.0, 50.0).is_ok());
    }

    #[test]
    fn tiny_distances_stay_bounded() {
        for &nu in &[0.3, 1.0, 2.5, 49.0] {
            let v = matern_correlation(1e-300, 1.0, nu).unwrap();
            assert!(v <= 1.0 && (v - 1.0).abs() < 1e-10, "nu={nu}: {v}");
        }
    }
}
