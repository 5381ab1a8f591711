//! Box-constrained limited-memory quasi-Newton maximization with
//! finite-difference derivatives.

use std::collections::VecDeque;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::time::Instant;

use faer::Mat;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::DenseSpd;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OptimError {
    #[error("objective is not finite at the initial point: {0}")]
    InitialPoint(String),
    #[error("invalid problem: {0}")]
    Invalid(String),
}

/// Objective to maximize; `Err` marks an infeasible point.
pub trait Objective: Sync {
    fn value(&self, x: &[f64]) -> Result<f64, String>;
}

impl<F: Fn(&[f64]) -> Result<f64, String> + Sync> Objective for F {
    fn value(&self, x: &[f64]) -> Result<f64, String> {
        self(x)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimOptions {
    pub max_iterations: usize,
    pub history: usize,
    /// Stop when the projected-gradient infinity norm falls below this.
    pub gradient_tol: f64,
    /// Stop when the relative objective change falls below this.
    pub objective_tol: f64,
    pub max_backtracks: usize,
    /// Evaluate finite-difference coordinates in parallel.
    pub parallel_gradient: bool,
}

impl Default for OptimOptions {
    fn default() -> Self {
        Self {
            max_iterations: 200,
            history: 10,
            gradient_tol: 1e-5,
            objective_tol: 2.2e-9,
            max_backtracks: 30,
            parallel_gradient: false,
        }
    }
}

impl OptimOptions {
    pub fn validate(&self) -> Result<(), OptimError> {
        if !(self.gradient_tol > 0.0 && self.objective_tol > 0.0) {
            return Err(OptimError::Invalid("tolerances must be positive".into()));
        }
        if self.history == 0 {
            return Err(OptimError::Invalid("history must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    Gradient,
    ObjectiveChange,
    IterationLimit,
    LineSearchFailure,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimResult {
    pub argmax: Vec<f64>,
    pub value: f64,
    pub initial_value: f64,
    pub iterations: usize,
    pub evaluations: usize,
    pub converged: bool,
    pub termination: Termination,
    /// Gradient at `argmax`.
    pub gradient: Vec<f64>,
    /// Coordinates whose last gradient used a one-sided difference.
    pub one_sided: Vec<bool>,
    pub wall_time: f64,
}

/// Gradient step `max(1e-6, 1e-7 |x|)`.
pub fn fd_step(x: f64) -> f64 {
    (1e-7 * x.abs()).max(1e-6)
}

#[derive(Clone, Debug, PartialEq)]
pub struct FdGradient {
    pub gradient: Vec<f64>,
    pub one_sided: Vec<bool>,
    /// Coordinates where no neighbor evaluation was finite.
    pub failed: Vec<usize>,
}

fn finite(f: &dyn Objective, x: &[f64]) -> Option<f64> {
    f.value(x).ok().filter(|v| v.is_finite())
}

fn gradient_coordinate(f: &dyn Objective, x: &[f64], fx: f64, i: usize, lo: f64, hi: f64) -> (Option<f64>, bool) {
    let h = fd_step(x[i]);
    let eval = |v: f64| {
        let mut y = x.to_vec();
        y[i] = v;
        finite(f, &y)
    };
    let up = if x[i] + h <= hi { eval(x[i] + h) } else { None };
    let down = if x[i] - h >= lo { eval(x[i] - h) } else { None };
    match (up, down) {
        (Some(a), Some(b)) => (Some((a - b) / (2.0 * h)), false),
        (Some(a), None) => (Some((a - fx) / h), true),
        (None, Some(b)) => (Some((fx - b) / h), true),
        (None, None) => (None, true),
    }
}

/// Central differences with a one-sided fallback at bounds or infeasible
/// neighbors.
pub fn fd_gradient(f: &dyn Objective, x: &[f64], fx: f64, lower: &[f64], upper: &[f64], parallel: bool) -> FdGradient {
    let coord = |i: usize| gradient_coordinate(f, x, fx, i, lower[i], upper[i]);
    let parts: Vec<(Option<f64>, bool)> =
        if parallel { (0..x.len()).into_par_iter().map(coord).collect() } else { (0..x.len()).map(coord).collect() };
    let mut out = FdGradient { gradient: vec![0.0; x.len()], one_sided: vec![false; x.len()], failed: vec![] };
    for (i, (g, one)) in parts.into_iter().enumerate() {
        out.one_sided[i] = one;
        match g {
            Some(g) => out.gradient[i] = g,
            None => out.failed.push(i),
        }
    }
    out
}

/// Symmetrized central second differences with step `1e-4 max(1, |x|)`.
pub fn hessian_fd(f: &dyn Objective, x: &[f64]) -> Result<Mat<f64>, String> {
    let p = x.len();
    let h: Vec<f64> = x.iter().map(|v| 1e-4 * v.abs().max(1.0)).collect();
    let eval = |moves: &[(usize, f64)]| -> Result<f64, String> {
        let mut y = x.to_vec();
        for &(i, d) in moves {
            y[i] += d;
        }
        let v = f.value(&y)?;
        if v.is_finite() {
            Ok(v)
        } else {
            Err("non-finite objective in Hessian stencil".into())
        }
    };
    let f0 = eval(&[])?;
    let mut hess = Mat::<f64>::zeros(p, p);
    for i in 0..p {
        let a = eval(&[(i, h[i])])?;
        let b = eval(&[(i, -h[i])])?;
        hess[(i, i)] = (a - 2.0 * f0 + b) / (h[i] * h[i]);
        for j in 0..i {
            let pp = eval(&[(i, h[i]), (j, h[j])])?;
            let pm = eval(&[(i, h[i]), (j, -h[j])])?;
            let mp = eval(&[(i, -h[i]), (j, h[j])])?;
            let mm = eval(&[(i, -h[i]), (j, -h[j])])?;
            let v = (pp - pm - mp + mm) / (4.0 * h[i] * h[j]);
            hess[(i, j)] = v;
            hess[(j, i)] = v;
        }
    }
    Ok(hess)
}

/// `sqrt(diag((-H)^{-1}))`; fails when `-H` is not positive definite.
pub fn standard_errors(hessian: &Mat<f64>) -> Result<Vec<f64>, String> {
    let p = hessian.nrows();
    let neg = DenseSpd::from_lower_fn(p, |i, j| -hessian[(i, j)]);
    let chol = neg.cholesky().map_err(|e| format!("negated Hessian is not positive definite ({e})"))?;
    let mut inv = Mat::<f64>::identity(p, p);
    chol.solve_mat(inv.as_mut());
    Ok((0..p).map(|i| inv[(i, i)].max(0.0).sqrt()).collect())
}

fn project(x: &mut [f64], lower: &[f64], upper: &[f64]) {
    for ((v, &l), &u) in x.iter_mut().zip(lower).zip(upper) {
        *v = v.clamp(l, u);
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Maximizes `f` over the box `[lower, upper]` from `initial`.
pub fn maximize(
    f: &dyn Objective,
    lower: &[f64],
    upper: &[f64],
    initial: &[f64],
    options: &OptimOptions,
) -> Result<OptimResult, OptimError> {
    options.validate()?;
    let p = initial.len();
    if lower.len() != p || upper.len() != p {
        return Err(OptimError::Invalid("bounds and initial point differ in length".into()));
    }
    if lower.iter().zip(upper).any(|(l, u)| !(l <= u)) {
        return Err(OptimError::Invalid("lower bound exceeds upper bound".into()));
    }
    let start = Instant::now();
    let counter = AtomicUsize::new(0);
    let counted = |x: &[f64]| {
        counter.fetch_add(1, Ordering::Relaxed);
        f.value(x)
    };
    // Minimize g = -f internally.
    let neg = |x: &[f64]| -> Option<f64> { counted(x).ok().filter(|v| v.is_finite()).map(|v| -v) };
    let grad = |x: &[f64], gx: f64| {
        let fd = fd_gradient(&counted, x, -gx, lower, upper, options.parallel_gradient);
        let g: Vec<f64> = fd.gradient.iter().map(|v| -v).collect();
        (g, fd.one_sided)
    };

    let mut x = initial.to_vec();
    project(&mut x, lower, upper);
    let mut gx = match counted(&x) {
        Ok(v) if v.is_finite() => -v,
        Ok(v) => return Err(OptimError::InitialPoint(format!("value {v}"))),
        Err(e) => return Err(OptimError::InitialPoint(e)),
    };
    let initial_value = -gx;
    let (mut g, mut one_sided) = grad(&x, gx);
    let mut memory: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::new();
    let mut iterations = 0;
    let termination = loop {
        let pg = (0..p).map(|i| (x[i] - (x[i] - g[i]).clamp(lower[i], upper[i])).abs()).fold(0.0, f64::max);
        if pg < options.gradient_tol {
            break Termination::Gradient;
        }
        if iterations >= options.max_iterations {
            break Termination::IterationLimit;
        }
        let pinned: Vec<bool> = (0..p).map(|i| (x[i] <= lower[i] && g[i] > 0.0) || (x[i] >= upper[i] && g[i] < 0.0)).collect();
        let mut accepted = None;
        for attempt in 0..2 {
            let d = if attempt == 0 && !memory.is_empty() {
                direction(&g, &pinned, &memory)
            } else {
                memory.clear();
                let gmax = g.iter().zip(&pinned).filter(|(_, &b)| !b).map(|(v, _)| v.abs()).fold(0.0, f64::max);
                let scale = if iterations == 0 && gmax > 0.0 { gmax.recip().min(1.0) } else { 1.0 };
                (0..p).map(|i| if pinned[i] { 0.0 } else { -scale * g[i] }).collect()
            };
            if dot(&d, &g) >= 0.0 {
                continue;
            }
            let mut t = 1.0;
            for _ in 0..=options.max_backtracks {
                let mut trial: Vec<f64> = x.iter().zip(&d).map(|(a, b)| a + t * b).collect();
                project(&mut trial, lower, upper);
                let step: Vec<f64> = trial.iter().zip(&x).map(|(a, b)| a - b).collect();
                let decrease = dot(&g, &step);
                if decrease >= 0.0 {
                    t *= 0.5;
                    continue;
                }
                if let Some(v) = neg(&trial) {
                    if v <= gx + 1e-4 * decrease {
                        accepted = Some((trial, v));
                        break;
                    }
                }
                t *= 0.5;
            }
            if accepted.is_some() {
                break;
            }
        }
        let Some((x_new, g_new_val)) = accepted else {
            break Termination::LineSearchFailure;
        };
        iterations += 1;
        let (g_new, os) = grad(&x_new, g_new_val);
        let s: Vec<f64> = x_new.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = g_new.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > 1e-10 * dot(&y, &y).max(f64::MIN_POSITIVE) {
            if memory.len() == options.history {
                memory.pop_front();
            }
            memory.push_back((s, y, sy));
        }
        let change = (gx - g_new_val).abs() / gx.abs().max(g_new_val.abs()).max(1.0);
        x = x_new;
        gx = g_new_val;
        g = g_new;
        one_sided = os;
        if change < options.objective_tol {
            break Termination::ObjectiveChange;
        }
    };
    Ok(OptimResult {
        argmax: x,
        value: -gx,
        initial_value,
        iterations,
        evaluations: counter.load(Ordering::Relaxed),
        converged: matches!(termination, Termination::Gradient | Termination::ObjectiveChange),
        termination,
        gradient: g.iter().map(|v| -v).collect(),
        one_sided,
        wall_time: start.elapsed().as_secs_f64(),
    })
}

/// Two-loop recursion restricted to unpinned coordinates.
fn direction(g: &[f64], pinned: &[bool], memory: &VecDeque<(Vec<f64>, Vec<f64>, f64)>) -> Vec<f64> {
    let mask = |v: &[f64]| -> Vec<f64> { v.iter().zip(pinned).map(|(a, &b)| if b { 0.0 } else { *a }).collect() };
    let mut q = mask(g);
    let mut alphas = Vec::with_capacity(memory.len());
    for (s, y, _) in memory.iter().rev() {
        let (s, y) = (mask(s), mask(y));
        let sy = dot(&s, &y);
        if sy <= 0.0 {
            alphas.push(0.0);
            continue;
        }
        let a = dot(&s, &q) / sy;
        for (qi, yi) in q.iter_mut().zip(&y) {
            *qi -= a * yi;
        }
        alphas.push(a);
    }
    let (s, y, _) = memory.back().unwrap();
    let (s, y) = (mask(s), mask(y));
    let yy = dot(&y, &y);
    let gamma = if yy > 0.0 && dot(&s, &y) > 0.0 { dot(&s, &y) / yy } else { 1.0 };
    for v in q.iter_mut() {
        *v *= gamma;
    }
    for ((s, y, _), a) in memory.iter().zip(alphas.iter().rev()) {
        let (s, y) = (mask(s), mask(y));
        let sy = dot(&s, &y);
        if sy <= 0.0 {
            continue;
        }
        let b = dot(&y, &q) / sy;
        for (qi, si) in q.iter_mut().zip(&s) {
            *qi += (a - b) * si;
        }
    }
    q.iter().zip(pinned).map(|(v, &b)| if b { 0.0 } else { -v }).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unbounded(p: usize) -> (Vec<f64>, Vec<f64>) {
        (vec![-10.0; p], vec![10.0; p])
    }

    #[test]
    fn quadratic_maximum() {
        let f = |x: &[f64]| Ok(-(x[0] - 3.0).powi(2));
        let (lo, hi) = unbounded(1);
        let r = maximize(&f, &lo, &hi, &[0.0], &OptimOptions::default()).unwrap();
        assert!((r.argmax[0] - 3.0).abs() < 1e-6, "{r:?}");
        assert!(r.converged);
    }

    #[test]
    fn clipped_coordinate_sits_on_bound() {
        let c = [1.0, -2.0, 12.0, 0.5, 3.0];
        let f = move |x: &[f64]| Ok(-x.iter().zip(&c).map(|(a, b)| (a - b).powi(2)).sum::<f64>());
        let (lo, hi) = unbounded(5);
        let r = maximize(&f, &lo, &hi, &[0.0; 5], &OptimOptions::default()).unwrap();
        assert_eq!(r.argmax[2], 10.0);
        for i in [0, 1, 3, 4] {
            assert!((r.argmax[i] - c[i]).abs() < 1e-5);
        }
    }

    #[test]
    fn rosenbrock() {
        let f = |x: &[f64]| Ok(-(100.0 * (x[1] - x[0] * x[0]).powi(2) + (1.0 - x[0]).powi(2)));
        let (lo, hi) = unbounded(2);
        let opts = OptimOptions { max_iterations: 1000, objective_tol: 1e-15, gradient_tol: 1e-7, ..Default::default() };
        let r = maximize(&f, &lo, &hi, &[-1.2, 1.0], &opts).unwrap();
        assert!((r.argmax[0] - 1.0).abs() < 1e-4 && (r.argmax[1] - 1.0).abs() < 1e-4, "{r:?}");
    }

    #[test]
    fn monotone_and_deterministic() {
        let f = |x: &[f64]| Ok(-(x[0] - 1.0).powi(4) - (x[1] + 0.5).powi(2) - 0.3 * x[0] * x[1]);
        let (lo, hi) = unbounded(2);
        let a = maximize(&f, &lo, &hi, &[4.0, 4.0], &OptimOptions::default()).unwrap();
        let b = maximize(&f, &lo, &hi, &[4.0, 4.0], &OptimOptions::default()).unwrap();
        assert!(a.value >= a.initial_value);
        assert_eq!(a.argmax, b.argmax);
        assert_eq!((a.iterations, a.evaluations), (b.iterations, b.evaluations));
    }

    #[test]
    fn infeasible_start_rejected() {
        let f = |_: &[f64]| Err::<f64, _>("bad".to_string());
        let (lo, hi) = unbounded(1);
        assert!(matches!(maximize(&f, &lo, &hi, &[0.0], &OptimOptions::default()), Err(OptimError::InitialPoint(_))));
    }

    #[test]
    fn gradient_of_squared_norm() {
        let f = |x: &[f64]| Ok(x.iter().map(|v| v * v).sum::<f64>());
        let (lo, hi) = unbounded(2);
        let g = fd_gradient(&f, &[1.0, 2.0], 5.0, &lo, &hi, false);
        assert!((g.gradient[0] - 2.0).abs() < 1e-6 && (g.gradient[1] - 4.0).abs() < 1e-6);
        assert_eq!(g.one_sided, vec![false, false]);
        let g = fd_gradient(&f, &[10.0, 2.0], 104.0, &lo, &hi, true);
        assert!(g.one_sided[0] && !g.one_sided[1]);
        assert!((g.gradient[0] - 20.0).abs() < 1e-4);
    }

    #[test]
    fn hessian_of_quadratic() {
        let f = |x: &[f64]| Ok(-0.5 * (2.0 * x[0] * x[0] + 8.0 * x[1] * x[1]));
        let h = hessian_fd(&f, &[0.3, -0.2]).unwrap();
        assert!((h[(0, 0)] + 2.0).abs() < 1e-4 && (h[(1, 1)] + 8.0).abs() < 1e-4 && h[(0, 1)].abs() < 1e-4);
        let se = standard_errors(&h).unwrap();
        assert!((se[0] - 0.5f64.sqrt()).abs() < 1e-4 && (se[1] - 0.125f64.sqrt()).abs() < 1e-4);
        let f = |x: &[f64]| Ok(-(x[0] * x[0] + 3.0 * x[0] * x[1] + 5.0 * x[1] * x[1]));
        let h = hessian_fd(&f, &[1.0, 1.0]).unwrap();
        assert!((h[(0, 1)] + 3.0).abs() < 1e-4 && (h[(1, 0)] + 3.0).abs() < 1e-4);
    }

    #[test]
    fn flat_ridge_gives_large_error() {
        let f = |x: &[f64]| Ok(-x[0] * x[0] - 1e-8 * x[1] * x[1]);
        let se = standard_errors(&hessian_fd(&f, &[0.0, 0.0]).unwrap());
        if let Ok(se) = se {
            assert!(se[1] > 1e3);
        }
        let f = |x: &[f64]| Ok(x[0] * x[0]);
        assert!(standard_errors(&hessian_fd(&f, &[0.0]).unwrap()).is_err());
    }
}
