//! Parameter layout, bounds and the shared-covariate reparameterization.

use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::design::{Component, DesignError, ModelDesign};

/// Bound on natural coefficients.
pub const COEF_BOUND: f64 = 20.0;
/// Bound on reparameterized `(alpha + theta_ms, alpha - theta_ms)` coordinates.
pub const PAIR_BOUND: f64 = 40.0;
/// Lower bound on the nugget log-variance.
pub const LOG_NUGGET_MIN: f64 = -30.0;
/// Upper bound on the nugget log-variance.
pub const LOG_NUGGET_MAX: f64 = 20.0;

/// One scalar of the parameter vector.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Entry {
    pub component: Component,
    /// Dataset covariate column, `None` for intercepts and the nugget.
    pub covariate: Option<usize>,
    pub label: String,
}

impl Entry {
    pub fn is_intercept(&self) -> bool {
        self.covariate.is_none()
    }
}

/// Maps every scalar of `(beta, alpha, theta_ms, theta_ga, theta_tt, xi, log_nugget)`
/// to its component and covariate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParameterLayout {
    entries: Vec<Entry>,
    ranges: Vec<(Component, Range<usize>)>,
    /// `(alpha index, theta_ms index)` for covariates shared by both components.
    shared_pairs: Vec<(usize, usize)>,
    reparam: bool,
}

impl ParameterLayout {
    pub fn new(design: &ModelDesign, covariate_names: &[String]) -> Result<Self, DesignError> {
        design.validate()?;
        let mut entries = Vec::new();
        let mut ranges = Vec::new();
        let mut resolved: Vec<(Component, Vec<usize>)> = Vec::new();
        for component in Component::ALL {
            if !design.has_component(component) {
                continue;
            }
            let start = entries.len();
            let symbol = component.symbol();
            entries.push(Entry {
                component,
                covariate: None,
                label: if component == Component::Nugget { symbol.to_string() } else { format!("{symbol}[intercept]") },
            });
            let mut cols = Vec::new();
            for name in design.covariates(component) {
                let idx = covariate_names.iter().position(|c| c == name).ok_or_else(|| DesignError::UnknownCovariate {
                    component,
                    covariate: name.clone(),
                })?;
                if cols.contains(&idx) {
                    return Err(DesignError::DuplicateCovariate { component, covariate: name.clone() });
                }
                cols.push(idx);
                entries.push(Entry { component, covariate: Some(idx), label: format!("{symbol}[{name}]") });
            }
            resolved.push((component, cols));
            ranges.push((component, start..entries.len()));
        }
        let mut layout = Self { entries, ranges, shared_pairs: Vec::new(), reparam: design.reparam };
        if design.reparam {
            let a = layout.range(Component::StdDev);
            let t = layout.range(Component::Scale);
            layout.shared_pairs.push((a.start, t.start));
            for (ia, ea) in layout.entries[a.clone()].iter().enumerate() {
                if let Some(it) = layout.entries[t.clone()].iter().position(|et| et.covariate.is_some() && et.covariate == ea.covariate) {
                    layout.shared_pairs.push((a.start + ia, t.start + it));
                }
            }
        }
        Ok(layout)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[Entry] {
        &self.entries
    }

    pub fn labels(&self) -> Vec<String> {
        self.entries.iter().map(|e| e.label.clone()).collect()
    }

    /// Index range of a component; empty when the component is absent.
    pub fn range(&self, component: Component) -> Range<usize> {
        self.ranges.iter().find(|(c, _)| *c == component).map(|(_, r)| r.clone()).unwrap_or(0..0)
    }

    pub fn has(&self, component: Component) -> bool {
        !self.range(component).is_empty()
    }

    /// Intercepts and the nugget are never penalized nor thresholded.
    pub fn always_active(&self) -> Vec<bool> {
        self.entries.iter().map(Entry::is_intercept).collect()
    }

    pub fn reparam(&self) -> bool {
        self.reparam
    }

    /// Reparameterized pairs whose members are both free under `free`.
    pub fn pairs(&self, free: Option<&[bool]>) -> Vec<(usize, usize)> {
        self.shared_pairs
            .iter()
            .copied()
            .filter(|&(a, t)| free.is_none_or(|f| f[a] && f[t]))
            .collect()
    }

    /// Natural values to optimizer coordinates.
    pub fn encode(&self, natural: &[f64], pairs: &[(usize, usize)]) -> Vec<f64> {
        let mut c = natural.to_vec();
        for &(a, t) in pairs {
            c[a] = natural[a] + natural[t];
            c[t] = natural[a] - natural[t];
        }
        c
    }

    /// Optimizer coordinates to natural values.
    pub fn decode(&self, coords: &[f64], pairs: &[(usize, usize)]) -> Vec<f64> {
        let mut v = coords.to_vec();
        for &(a, t) in pairs {
            v[a] = 0.5 * (coords[a] + coords[t]);
            v[t] = 0.5 * (coords[a] - coords[t]);
        }
        v
    }

    /// Box bounds in optimizer coordinates.
    pub fn bounds(&self, pairs: &[(usize, usize)]) -> (Vec<f64>, Vec<f64>) {
        let mut lo = vec![-COEF_BOUND; self.len()];
        let mut hi = vec![COEF_BOUND; self.len()];
        for i in self.range(Component::Nugget) {
            lo[i] = LOG_NUGGET_MIN;
            hi[i] = LOG_NUGGET_MAX;
        }
        for &(a, t) in pairs {
            for i in [a, t] {
                lo[i] = -PAIR_BOUND;
                hi[i] = PAIR_BOUND;
            }
        }
        (lo, hi)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn names() -> Vec<String> {
        ["elev", "slope", "dist"].iter().map(|s| s.to_string()).collect()
    }

    fn design() -> ModelDesign {
        let mut d = ModelDesign::stationary(1.0);
        d.mean = vec!["elev".into(), "slope".into()];
        d.std_dev = vec!["elev".into()];
        d.scale = vec!["dist".into(), "elev".into()];
        d.aniso = Some(vec!["slope".into()]);
        d.tilt = Some(vec![]);
        d.smoothness.nu_max = 2.5;
        d.smooth = vec!["dist".into()];
        d.nugget = true;
        d.reparam = true;
        d
    }

    #[test]
    fn layout_covers_every_scalar_once() {
        let l = ParameterLayout::new(&design(), &names()).unwrap();
        assert_eq!(l.len(), 3 + 2 + 3 + 2 + 1 + 2 + 1);
        let mut seen = vec![0; l.len()];
        for c in Component::ALL {
            for i in l.range(c) {
                seen[i] += 1;
                assert_eq!(l.entries()[i].component, c);
            }
        }
        assert!(seen.iter().all(|&s| s == 1));
        assert_eq!(l.labels()[4], "alpha[elev]");
        assert_eq!(l.pairs(None), vec![(3, 5), (4, 7)]);
    }

    #[test]
    fn reparameterization_is_bijective() {
        let l = ParameterLayout::new(&design(), &names()).unwrap();
        let natural: Vec<f64> = (0..l.len()).map(|i| 0.1 * i as f64 - 0.4).collect();
        let pairs = l.pairs(None);
        let back = l.decode(&l.encode(&natural, &pairs), &pairs);
        for (a, b) in natural.iter().zip(&back) {
            assert!((a - b).abs() < 1e-15);
        }
        let mut free = vec![true; l.len()];
        free[7] = false;
        assert_eq!(l.pairs(Some(&free)), vec![(3, 5)]);
    }

    #[test]
    fn unknown_covariate_named() {
        let mut d = design();
        d.scale.push("aspect".into());
        match ParameterLayout::new(&d, &names()) {
            Err(DesignError::UnknownCovariate { component, covariate }) => {
                assert_eq!((component, covariate.as_str()), (Component::Scale, "aspect"))
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn fixed_smoothness_has_no_coefficients() {
        let l = ParameterLayout::new(&ModelDesign::stationary(0.5), &[]).unwrap();
        assert_eq!(l.len(), 3);
        assert!(!l.has(Component::Smooth));
    }
}
