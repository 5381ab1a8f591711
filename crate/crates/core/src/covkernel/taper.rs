use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::KernelError;

/// Compactly supported correlation families used for tapering.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaperFamily {
    Spherical,
    Wendland1,
    Wendland2,
    None,
}

impl FromStr for TaperFamily {
    type Err = KernelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "spherical" => Ok(TaperFamily::Spherical),
            "wendland1" => Ok(TaperFamily::Wendland1),
            "wendland2" => Ok(TaperFamily::Wendland2),
            "none" => Ok(TaperFamily::None),
            other => Err(KernelError::Domain(format!("unknown taper family '{other}'"))),
        }
    }
}

impl fmt::Display for TaperFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            TaperFamily::Spherical => "spherical",
            TaperFamily::Wendland1 => "wendland1",
            TaperFamily::Wendland2 => "wendland2",
            TaperFamily::None => "none",
        };
        f.write_str(s)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaperSpec {
    pub family: TaperFamily,
    /// Support radius; ignored for [`TaperFamily::None`].
    #[serde(with = "crate::serde_float")]
    pub delta: f64,
}

impl TaperSpec {
    pub fn new(family: TaperFamily, delta: f64) -> Result<Self, KernelError> {
        if family != TaperFamily::None && !(delta.is_finite() && delta > 0.0) {
            return Err(KernelError::Domain(format!("taper range must be positive, got {delta}")));
        }
        Ok(Self { family, delta })
    }

    pub fn none() -> Self {
        Self { family: TaperFamily::None, delta: f64::INFINITY }
    }

    /// Support radius, infinite without a taper.
    pub fn radius(&self) -> f64 {
        match self.family {
            TaperFamily::None => f64::INFINITY,
            _ => self.delta,
        }
    }

    /// Parses `FAMILY:DELTA` (or just `none`).
    pub fn parse(s: &str) -> Result<Self, KernelError> {
        let mut parts = s.splitn(2, ':');
        let family: TaperFamily = parts.next().unwrap_or_default().parse()?;
        match (family, parts.next()) {
            (TaperFamily::None, _) => Ok(Self::none()),
            (_, Some(d)) => {
                let delta = d
                    .trim()
                    .parse::<f64>()
                    .map_err(|_| KernelError::Domain(format!("invalid taper range '{d}'")))?;
                Self::new(family, delta)
            }
            (_, None) => Err(KernelError::Domain(format!("taper '{s}' needs a range, e.g. wendland1:0.2"))),
        }
    }

    /// Evaluates the taper; `self` is assumed valid.
    #[inline]
    pub(crate) fn eval(&self, h: f64) -> f64 {
        let delta = self.delta;
        match self.family {
            TaperFamily::None => 1.0,
            _ if h >= delta => 0.0,
            TaperFamily::Spherical => {
                let t = h / delta;
                1.0 - 1.5 * t + 0.5 * t * t * t
            }
            TaperFamily::Wendland1 => {
                let t = h / delta;
                (1.0 - t).powi(4) * (4.0 * t + 1.0)
            }
            TaperFamily::Wendland2 => {
                let t = h / delta;
                (1.0 - t).powi(6) * (35.0 / 3.0 * t * t + 6.0 * t + 1.0)
            }
        }
    }
}

pub fn taper_correlation(h: f64, spec: &TaperSpec) -> Result<f64, KernelError> {
    if !(h >= 0.0) {
        return Err(KernelError::Domain(format!("distance must be nonnegative, got {h}")));
    }
    let spec = TaperSpec::new(spec.family, spec.delta)?;
    Ok(spec.eval(h))
}

#[cfg(test)]
mod tests {
    use super::*;

    const FAMILIES: [TaperFamily; 3] = [TaperFamily::Spherical, TaperFamily::Wendland1, TaperFamily::Wendland2];

    #[test]
    fn origin_and_half_range_values() {
        for family in FAMILIES {
            let spec = TaperSpec::new(family, 2.0).unwrap();
            assert_eq!(taper_correlation(0.0, &spec).unwrap(), 1.0);
        }
        let sph = TaperSpec::new(TaperFamily::Spherical, 2.0).unwrap();
        assert!((taper_correlation(1.0, &sph).unwrap() - 0.3125).abs() < 1e-15);
        let w1 = TaperSpec::new(TaperFamily::Wendland1, 2.0).unwrap();
        assert!((taper_correlation(1.0, &w1).unwrap() - 0.1875).abs() < 1e-15);
        let w2 = TaperSpec::new(TaperFamily::Wendland2, 2.0).unwrap();
        let expected = 0.5f64.powi(6) * (35.0 / 12.0 + 3.0 + 1.0);
        assert!((taper_correlation(1.0, &w2).unwrap() - expected).abs() < 1e-15);
    }

    #[test]
    fn monotone_with_compact_support() {
        for family in FAMILIES {
            let spec = TaperSpec::new(family, 0.7).unwrap();
            let mut prev = 1.0;
            for i in 0..=1000 {
                let h = 0.7 * i as f64 / 1000.0;
                let v = taper_correlation(h, &spec).unwrap();
                assert!(v <= prev + 1e-15 && v >= 0.0);
                prev = v;
            }
            assert_eq!(taper_correlation(0.7, &spec).unwrap(), 0.0);
            assert_eq!(taper_correlation(5.0, &spec).unwrap(), 0.0);
        }
    }

    #[test]
    fn parsing() {
        assert_eq!(TaperSpec::parse("wendland1:0.18").unwrap(), TaperSpec::new(TaperFamily::Wendland1, 0.18).unwrap());
        assert_eq!(TaperSpec::parse("none").unwrap().family, TaperFamily::None);
        assert!(TaperSpec::parse("gaussian:1").is_err());
        assert!(TaperSpec::parse("spherical").is_err());
        assert!(TaperSpec::parse("spherical:-1").is_err());
        assert!(taper_correlation(-0.1, &TaperSpec::none()).is_err());
    }
}
