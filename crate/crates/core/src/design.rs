//! Model designs: which covariates drive which component, plus penalties.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::covkernel::{MaternConvention, SmoothnessBounds, TaperFamily, TaperSpec};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DesignError {
    #[error("component '{component}' references unknown covariate '{covariate}'")]
    UnknownCovariate { component: Component, covariate: String },
    #[error("component '{component}' lists covariate '{covariate}' twice")]
    DuplicateCovariate { component: Component, covariate: String },
    #[error("smoothness is fixed (nu_min == nu_max) but covariates were assigned to it")]
    FixedSmoothWithCovariates,
    #[error("tapered models use isotropic kernels; disable the aniso and tilt components")]
    TaperedAnisotropy,
    #[error("invalid penalty '{0}'")]
    Penalty(String),
    #[error("{0}")]
    Invalid(String),
}

/// Model component a coefficient belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Component {
    Mean,
    StdDev,
    Scale,
    Aniso,
    Tilt,
    Smooth,
    Nugget,
}

impl Component {
    pub const ALL: [Component; 7] = [
        Component::Mean,
        Component::StdDev,
        Component::Scale,
        Component::Aniso,
        Component::Tilt,
        Component::Smooth,
        Component::Nugget,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Component::Mean => "mean",
            Component::StdDev => "std_dev",
            Component::Scale => "scale",
            Component::Aniso => "aniso",
            Component::Tilt => "tilt",
            Component::Smooth => "smooth",
            Component::Nugget => "nugget",
        }
    }

    /// Coefficient symbol used in reports.
    pub fn symbol(self) -> &'static str {
        match self {
            Component::Mean => "beta",
            Component::StdDev => "alpha",
            Component::Scale => "theta_ms",
            Component::Aniso => "theta_ga",
            Component::Tilt => "theta_tt",
            Component::Smooth => "xi",
            Component::Nugget => "log_nugget",
        }
    }
}

impl fmt::Display for Component {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Penalty weights and thresholds.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PenaltyConfig {
    /// Weight on `sqrt(nu0) * rho0`.
    #[serde(with = "crate::serde_float")]
    pub lambda_r: f64,
    /// Lasso weight on mean slopes.
    #[serde(with = "crate::serde_float")]
    pub lambda_mu: f64,
    /// Lasso weight on covariance slopes.
    #[serde(with = "crate::serde_float")]
    pub lambda_sigma: f64,
    /// Sharpness of the smooth absolute value.
    pub kappa: f64,
    /// Activity threshold for two-stage selection.
    pub epsilon: f64,
}

impl Default for PenaltyConfig {
    fn default() -> Self {
        Self { lambda_r: 0.0, lambda_mu: 0.0, lambda_sigma: 0.0, kappa: 1e6, epsilon: 1e-4 }
    }
}

impl PenaltyConfig {
    pub fn validate(&self) -> Result<(), DesignError> {
        for (name, v) in [("lambda_r", self.lambda_r), ("lambda_mu", self.lambda_mu), ("lambda_sigma", self.lambda_sigma)] {
            if !(v >= 0.0) {
                return Err(DesignError::Penalty(format!("{name} must be nonnegative, got {v}")));
            }
        }
        if !(self.kappa >= 1.0 && self.kappa.is_finite()) {
            return Err(DesignError::Penalty(format!("kappa must be finite and >= 1, got {}", self.kappa)));
        }
        if !(self.epsilon >= 0.0 && self.epsilon.is_finite()) {
            return Err(DesignError::Penalty(format!("epsilon must be nonnegative, got {}", self.epsilon)));
        }
        Ok(())
    }
}

/// Covariate assignment and modelling options.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelDesign {
    pub mean: Vec<String>,
    pub std_dev: Vec<String>,
    pub scale: Vec<String>,
    /// `None` disables geometric anisotropy (`r = 1`).
    pub aniso: Option<Vec<String>>,
    /// `None` disables the tilt (`omega = pi/2`).
    pub tilt: Option<Vec<String>>,
    pub smooth: Vec<String>,
    pub smoothness: SmoothnessBounds,
    pub taper: TaperSpec,
    pub penalties: PenaltyConfig,
    pub nugget: bool,
    /// Shared-covariate reparameterization of (std_dev, scale) pairs.
    pub reparam: bool,
    pub convention: MaternConvention,
    pub seed: u64,
}

impl ModelDesign {
    /// Intercept-only isotropic design with smoothness fixed at `nu`.
    pub fn stationary(nu: f64) -> Self {
        Self {
            mean: vec![],
            std_dev: vec![],
            scale: vec![],
            aniso: None,
            tilt: None,
            smooth: vec![],
            smoothness: SmoothnessBounds { nu_min: nu, nu_max: nu },
            taper: TaperSpec::none(),
            penalties: PenaltyConfig::default(),
            nugget: false,
            reparam: false,
            convention: MaternConvention::default(),
            seed: 0,
        }
    }

    pub fn is_tapered(&self) -> bool {
        self.taper.family != TaperFamily::None
    }

    pub fn covariates(&self, component: Component) -> &[String] {
        match component {
            Component::Mean => &self.mean,
            Component::StdDev => &self.std_dev,
            Component::Scale => &self.scale,
            Component::Aniso => self.aniso.as_deref().unwrap_or(&[]),
            Component::Tilt => self.tilt.as_deref().unwrap_or(&[]),
            Component::Smooth => &self.smooth,
            Component::Nugget => &[],
        }
    }

    /// Whether the component contributes any coefficient.
    pub fn has_component(&self, component: Component) -> bool {
        match component {
            Component::Aniso => self.aniso.is_some(),
            Component::Tilt => self.tilt.is_some(),
            Component::Smooth => !self.smoothness.is_fixed(),
            Component::Nugget => self.nugget,
            _ => true,
        }
    }

    pub fn validate(&self) -> Result<(), DesignError> {
        SmoothnessBounds::new(self.smoothness.nu_min, self.smoothness.nu_max)
            .map_err(|e| DesignError::Invalid(e.to_string()))?;
        TaperSpec::new(self.taper.family, self.taper.delta).map_err(|e| DesignError::Invalid(e.to_string()))?;
        self.penalties.validate()?;
        if self.smoothness.is_fixed() && !self.smooth.is_empty() {
            return Err(DesignError::FixedSmoothWithCovariates);
        }
        if self.is_tapered() && (self.aniso.is_some() || self.tilt.is_some()) {
            return Err(DesignError::TaperedAnisotropy);
        }
        Ok(())
    }
}
