use faer::{Mat, Side};

use super::{LinalgError, SpdMatrix};

/// Largest eigenvalue of the symmetric operator `op` by Lanczos with full
/// reorthogonalization.
pub fn largest_eigenvalue(n: usize, steps: usize, op: impl Fn(&[f64]) -> Vec<f64>) -> f64 {
    let m = steps.min(n).max(1);
    let mut q: Vec<Vec<f64>> = Vec::with_capacity(m);
    let mut v: Vec<f64> = (0..n).map(|i| 1.0 + 0.5 * ((i as f64) * 0.618_033_988_75).fract()).collect();
    normalize(&mut v);
    let mut alpha = Vec::with_capacity(m);
    let mut beta: Vec<f64> = Vec::with_capacity(m);
    for k in 0..m {
        let mut w = op(&v);
        let a = dotp(&w, &v);
        alpha.push(a);
        q.push(v.clone());
        for _ in 0..2 {
            for qi in &q {
                let c = dotp(&w, qi);
                for (wi, qv) in w.iter_mut().zip(qi) {
                    *wi -= c * qv;
                }
            }
        }
        let b = dotp(&w, &w).sqrt();
        if k + 1 == m || b <= 1e-14 * a.abs().max(f64::MIN_POSITIVE) {
            break;
        }
        beta.push(b);
        v = w.into_iter().map(|x| x / b).collect();
    }
    let k = alpha.len();
    let t = Mat::from_fn(k, k, |i, j| {
        if i == j {
            alpha[i]
        } else if i == j + 1 {
            beta[j]
        } else if j == i + 1 {
            beta[i]
        } else {
            0.0
        }
    });
    t.self_adjoint_eigenvalues(Side::Lower)
        .map(|ev| ev.into_iter().fold(f64::NEG_INFINITY, f64::max))
        .unwrap_or(alpha[0])
}

fn dotp(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn normalize(v: &mut [f64]) {
    let s = dotp(v, v).sqrt();
    v.iter_mut().for_each(|x| *x /= s);
}

/// Ratio of the extreme eigenvalues, `lambda_max(A) * lambda_max(A^{-1})`.
pub fn condition_estimate(matrix: &SpdMatrix) -> Result<f64, LinalgError> {
    let n = matrix.n();
    let factor = matrix.cholesky()?;
    let steps = 80;
    let top = largest_eigenvalue(n, steps, |x| matrix.matvec(x));
    let inv_top = largest_eigenvalue(n, steps, |x| factor.solve(x));
    Ok(top * inv_top)
}
