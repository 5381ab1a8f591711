//! Spatially varying parametric functions: standard deviation, smoothness and
//! the 2x2 local anisotropy kernel.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use super::KernelError;

/// Tilt angles are kept this far (as a fraction of pi) from 0 and pi.
pub const OMEGA_MARGIN: f64 = 1e-6;

#[inline]
pub(crate) fn dot(x: &[f64], coeffs: &[f64]) -> f64 {
    debug_assert_eq!(x.len(), coeffs.len());
    x.iter().zip(coeffs).map(|(a, b)| a * b).sum()
}

#[inline]
pub fn logistic(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

/// Bounds of the spatially varying smoothness.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SmoothnessBounds {
    pub nu_min: f64,
    pub nu_max: f64,
}

impl SmoothnessBounds {
    pub fn new(nu_min: f64, nu_max: f64) -> Result<Self, KernelError> {
        if !(nu_min.is_finite() && nu_max.is_finite()) || nu_min <= 0.0 || nu_min > nu_max {
            return Err(KernelError::Domain(format!(
                "smoothness bounds need 0 < nu_min <= nu_max, got ({nu_min}, {nu_max})"
            )));
        }
        if nu_max > super::matern::NU_CEILING {
            return Err(KernelError::Domain(format!(
                "nu_max {nu_max} exceeds the supported ceiling {}",
                super::matern::NU_CEILING
            )));
        }
        Ok(Self { nu_min, nu_max })
    }

    /// True when the bounds pin the smoothness to a single value.
    pub fn is_fixed(&self) -> bool {
        self.nu_min == self.nu_max
    }

    /// Bounded logistic link: `(nu_max - nu_min) / (1 + exp(-eta)) + nu_min`.
    #[inline]
    pub fn nu_from_linear(&self, eta: f64) -> f64 {
        (self.nu_max - self.nu_min) * logistic(eta) + self.nu_min
    }
}

pub fn nu_fn(x: &[f64], zeta: &[f64], bounds: SmoothnessBounds) -> f64 {
    bounds.nu_from_linear(dot(x, zeta))
}

pub fn sigma_fn(x: &[f64], alpha: &[f64]) -> f64 {
    (0.5 * dot(x, alpha)).exp()
}

/// Symmetric 2x2 matrix `[[xx, xy], [xy, yy]]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sym2 {
    pub xx: f64,
    pub xy: f64,
    pub yy: f64,
}

impl Sym2 {
    pub const IDENTITY: Sym2 = Sym2 { xx: 1.0, xy: 0.0, yy: 1.0 };

    pub fn new(xx: f64, xy: f64, yy: f64) -> Self {
        Self { xx, xy, yy }
    }

    pub fn scaled_identity(s: f64) -> Self {
        Self { xx: s, xy: 0.0, yy: s }
    }

    #[inline]
    pub fn det(&self) -> f64 {
        self.xx * self.yy - self.xy * self.xy
    }

    #[inline]
    pub fn average(&self, other: &Sym2) -> Sym2 {
        Sym2 {
            xx: 0.5 * (self.xx + other.xx),
            xy: 0.5 * (self.xy + other.xy),
            yy: 0.5 * (self.yy + other.yy),
        }
    }

    /// `d^T self^{-1} d` using the supplied determinant.
    #[inline]
    pub fn inverse_quad(&self, det: f64, dx: f64, dy: f64) -> f64 {
        (self.yy * dx * dx - 2.0 * self.xy * dx * dy + self.xx * dy * dy) / det
    }

    pub fn is_positive_definite(&self) -> bool {
        self.xx > 0.0 && self.det() > 0.0 && self.xx.is_finite() && self.yy.is_finite()
    }
}

/// Scale `rho`, axis ratio `r` and tilt angle `omega` of a local kernel.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct KernelShape {
    pub rho: f64,
    pub r: f64,
    pub omega: f64,
}

impl KernelShape {
    pub fn new(rho: f64, r: f64, omega: f64) -> Result<Self, KernelError> {
        if !(rho.is_finite() && r.is_finite() && omega.is_finite()) {
            return Err(KernelError::NonFinite("kernel shape"));
        }
        if rho <= 0.0 || r <= 0.0 {
            return Err(KernelError::Domain(format!(
                "kernel scale and ratio must be positive, got rho={rho}, r={r}"
            )));
        }
        if omega < OMEGA_MARGIN * PI || omega > (1.0 - OMEGA_MARGIN) * PI {
            return Err(KernelError::Degenerate(omega));
        }
        Ok(Self { rho, r, omega })
    }

    /// Shape from linear predictors; the tilt is clamped away from 0 and pi.
    pub fn from_linear(eta_ms: f64, eta_ga: f64, eta_tt: f64) -> Self {
        let omega = (logistic(eta_tt) * PI).clamp(OMEGA_MARGIN * PI, (1.0 - OMEGA_MARGIN) * PI);
        Self { rho: eta_ms.exp(), r: eta_ga.exp(), omega }
    }

    /// `rho^2 [[1, r cos w], [r cos w, r^2]]`.
    pub fn matrix(&self) -> Sym2 {
        let rho2 = self.rho * self.rho;
        Sym2 {
            xx: rho2,
            xy: rho2 * self.r * self.omega.cos(),
            yy: rho2 * self.r * self.r,
        }
    }

    /// Closed-form determinant `rho^4 r^2 sin^2 w`.
    pub fn det(&self) -> f64 {
        let s = self.omega.sin();
        self.rho.powi(4) * self.r * self.r * s * s
    }
}

/// Anisotropy coefficient blocks for one location's covariates.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnisotropyCoefficients {
    pub theta_ms: Vec<f64>,
    pub theta_ga: Vec<f64>,
    pub theta_tt: Vec<f64>,
}

/// Local kernel matrix for covariate rows `x_ms`, `x_ga`, `x_tt` (one per block).
pub fn kernel_matrix(
    x_ms: &[f64],
    x_ga: &[f64],
    x_tt: &[f64],
    coeffs: &AnisotropyCoefficients,
) -> Result<Sym2, KernelError> {
    if x_ms.len() != coeffs.theta_ms.len()
        || x_ga.len() != coeffs.theta_ga.len()
        || x_tt.len() != coeffs.theta_tt.len()
    {
        return Err(KernelError::Domain("covariate and coefficient lengths differ".into()));
    }
    let eta_tt = dot(x_tt, &coeffs.theta_tt);
    let omega = logistic(eta_tt) * PI;
    if omega < OMEGA_MARGIN * PI || omega > (1.0 - OMEGA_MARGIN) * PI {
        return Err(KernelError::Degenerate(omega));
    }
    let shape = KernelShape::from_linear(dot(x_ms, &coeffs.theta_ms), dot(x_ga, &coeffs.theta_ga), eta_tt);
    Ok(shape.matrix())
}

/// Eigen-structure of a local kernel.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct KernelEigen {
    /// Major then minor eigenvalue.
    pub values: [f64; 2],
    /// Unit eigenvectors matching `values`.
    pub vectors: [[f64; 2]; 2],
    /// Angle of the major axis in `(-pi/2, pi/2]`.
    pub rotation: f64,
}

/// Closed-form eigenvalues, eigenvectors and major-axis rotation of
/// `rho^2 [[1, r cos w], [r cos w, r^2]]`.
pub fn kernel_eigen(shape: &KernelShape) -> Result<KernelEigen, KernelError> {
    let KernelShape { rho, r, omega } = KernelShape::new(shape.rho, shape.r, shape.omega)?;
    let r2 = r * r;
    let sin_w = omega.sin();
    let disc = ((r2 + 1.0) * (r2 + 1.0) - 4.0 * r2 * sin_w * sin_w).max(0.0);
    let a = disc.sqrt();
    let half_rho2 = 0.5 * rho * rho;
    let major = half_rho2 * ((r2 + 1.0) + a);
    // The minor root via the determinant avoids cancellation near omega = 0, pi.
    let values = [major, rho.powi(4) * r2 * sin_w * sin_w / major];

    let off = 2.0 * r * omega.cos();
    let raw = [[off, r2 - 1.0 + a], [off, r2 - 1.0 - a]];
    let norms = [raw[0][0].hypot(raw[0][1]), raw[1][0].hypot(raw[1][1])];
    // One of the two formula vectors collapses when the kernel is axis-aligned;
    // the better-conditioned one fixes the other by orthogonality.
    let scale = (r2 + 1.0).max(1.0);
    let vectors = if norms[0].max(norms[1]) <= 1e-12 * scale {
        [[1.0, 0.0], [0.0, 1.0]]
    } else if norms[0] >= norms[1] {
        let v = [raw[0][0] / norms[0], raw[0][1] / norms[0]];
        [v, [-v[1], v[0]]]
    } else {
        let w = [raw[1][0] / norms[1], raw[1][1] / norms[1]];
        [[w[1], -w[0]], w]
    };
    let axis = vectors[0];
    let rotation = if axis[0] == 0.0 {
        PI / 2.0
    } else {
        let t = (axis[1] / axis[0]).atan();
        if t <= -PI / 2.0 { t + PI } else { t }
    };
    Ok(KernelEigen { values, vectors, rotation })
}

/// Per-location `(sigma, Sigma, nu)` triple.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LocalKernel {
    pub sigma: f64,
    pub sigma_matrix: Sym2,
    pub nu: f64,
}

impl LocalKernel {
    pub fn new(sigma: f64, sigma_matrix: Sym2, nu: f64) -> Result<Self, KernelError> {
        if !(sigma.is_finite() && sigma > 0.0) {
            return Err(KernelError::Domain(format!("sigma must be positive, got {sigma}")));
        }
        if !sigma_matrix.is_positive_definite() {
            return Err(KernelError::Singular);
        }
        super::matern::check_nu(nu)?;
        Ok(Self { sigma, sigma_matrix, nu })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn nu_fn_examples() {
        let b = SmoothnessBounds::new(0.5, 2.5).unwrap();
        assert_eq!(b.nu_from_linear(0.0), 1.5);
        assert_eq!(b.nu_from_linear(1e6), 2.5);
        assert_eq!(b.nu_from_linear(-1e6), 0.5);
        let b = SmoothnessBounds::new(0.5, 2.0).unwrap();
        let v = nu_fn(&[1.0, 2.0], &[3.0, -1.0], b);
        assert!(close(v, 1.5 / (1.0 + (-1f64).exp()) + 0.5, 1e-15));
        assert!(close(v, 1.596_588, 1e-6));
    }

    #[test]
    fn nu_fn_stays_strictly_inside_for_moderate_inputs() {
        let b = SmoothnessBounds::new(0.5, 2.5).unwrap();
        for i in -30..=30 {
            let v = b.nu_from_linear(i as f64);
            assert!(v > 0.5 && v < 2.5);
        }
    }

    #[test]
    fn smoothness_bounds_validation() {
        assert!(SmoothnessBounds::new(0.0, 1.0).is_err());
        assert!(SmoothnessBounds::new(2.0, 1.0).is_err());
        assert!(SmoothnessBounds::new(1.0, 60.0).is_err());
        assert!(SmoothnessBounds::new(1.0, 1.0).unwrap().is_fixed());
    }

    #[test]
    fn sigma_fn_examples() {
        assert_eq!(sigma_fn(&[1.0], &[0.0]), 1.0);
        assert!(close(sigma_fn(&[1.0], &[2.0]), std::f64::consts::E, 1e-15));
        assert!(close(sigma_fn(&[1.0], &[-1.386_294]), 0.5, 1e-6));
    }

    #[test]
    fn kernel_matrix_examples() {
        let coeffs = AnisotropyCoefficients {
            theta_ms: vec![0.0],
            theta_ga: vec![0.0],
            theta_tt: vec![0.0],
        };
        let m = kernel_matrix(&[1.0], &[1.0], &[1.0], &coeffs).unwrap();
        assert!(close(m.xx, 1.0, 1e-15) && close(m.xy, 0.0, 1e-15) && close(m.yy, 1.0, 1e-15));

        let m = KernelShape::new(2.0, 1.0, PI / 2.0).unwrap().matrix();
        assert!(close(m.xx, 4.0, 1e-14) && close(m.xy, 0.0, 1e-14) && close(m.yy, 4.0, 1e-14));

        let m = KernelShape::new(1.0, 2.0, PI / 3.0).unwrap().matrix();
        assert!(close(m.xx, 1.0, 1e-14) && close(m.xy, 1.0, 1e-14) && close(m.yy, 4.0, 1e-14));
    }

    #[test]
    fn kernel_matrix_rejects_degenerate_tilt() {
        let coeffs = AnisotropyCoefficients {
            theta_ms: vec![0.0],
            theta_ga: vec![0.0],
            theta_tt: vec![40.0],
        };
        assert!(matches!(
            kernel_matrix(&[1.0], &[1.0], &[1.0], &coeffs),
            Err(KernelError::Degenerate(_))
        ));
        assert!(KernelShape::new(1.0, 1.0, 0.0).is_err());
        assert!(KernelShape::new(1.0, 1.0, PI).is_err());
    }

    #[test]
    fn closed_form_determinant() {
        let s = KernelShape::new(1.3, 0.7, 1.1).unwrap();
        assert!(close(s.det(), s.matrix().det(), 1e-14));
    }

    #[test]
    fn eigen_examples() {
        let e = kernel_eigen(&KernelShape::new(1.0, 1.0, PI / 3.0).unwrap()).unwrap();
        assert!(close(e.values[0], 1.5, 1e-14) && close(e.values[1], 0.5, 1e-14));

        // Axis-aligned case: rho^2 diag(1, r^2).
        let e = kernel_eigen(&KernelShape::new(2.0, 3.0, PI / 2.0).unwrap()).unwrap();
        assert!(close(e.values[0], 36.0, 1e-12) && close(e.values[1], 4.0, 1e-12));
        assert!(close(e.vectors[0][1].abs(), 1.0, 1e-12));
        assert!(close(e.rotation, PI / 2.0, 1e-12));

        let e = kernel_eigen(&KernelShape::new(1.0, 2.0, PI / 3.0).unwrap()).unwrap();
        assert!(close(e.values[0], 4.302_776, 1e-6) && close(e.values[1], 0.697_224, 1e-6));
    }

    #[test]
    fn eigenvectors_are_orthonormal_and_satisfy_definition() {
        for &(rho, r, omega) in &[(1.0, 0.5, 0.3), (0.7, 1.0, PI / 2.0), (2.0, 0.3, 2.9), (1.0, 1.0, 1.0)] {
            let shape = KernelShape::new(rho, r, omega).unwrap();
            let m = shape.matrix();
            let e = kernel_eigen(&shape).unwrap();
            for (lam, v) in e.values.iter().zip(e.vectors.iter()) {
                let av = [m.xx * v[0] + m.xy * v[1], m.xy * v[0] + m.yy * v[1]];
                assert!(close(av[0], lam * v[0], 1e-12) && close(av[1], lam * v[1], 1e-12));
                assert!(close(v[0].hypot(v[1]), 1.0, 1e-14));
            }
            let dotp = e.vectors[0][0] * e.vectors[1][0] + e.vectors[0][1] * e.vectors[1][1];
            assert!(dotp.abs() < 1e-12);
        }
    }

    #[test]
    fn rotation_matches_printed_arctan_when_defined() {
        let (r, omega) = (0.6f64, 1.2f64);
        let shape = KernelShape::new(1.0, r, omega).unwrap();
        let a = ((r * r + 1.0).powi(2) - 4.0 * r * r * omega.sin().powi(2)).sqrt();
        let expected = ((r * r - 1.0 + a) / (2.0 * r * omega.cos())).atan();
        assert!(close(kernel_eigen(&shape).unwrap().rotation, expected, 1e-14));
    }

    #[test]
    fn local_kernel_invariants() {
        assert!(LocalKernel::new(1.0, Sym2::IDENTITY, 1.0).is_ok());
        assert!(LocalKernel::new(0.0, Sym2::IDENTITY, 1.0).is_err());
        assert!(LocalKernel::new(1.0, Sym2::new(1.0, 1.0, 1.0), 1.0).is_err());
        assert!(LocalKernel::new(1.0, Sym2::IDENTITY, 0.0).is_err());
    }
}
