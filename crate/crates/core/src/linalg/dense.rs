use faer::dyn_stack::{MemBuffer, MemStack};
use faer::linalg::cholesky::llt::factor::{cholesky_in_place, cholesky_in_place_scratch, LltError};
use faer::linalg::triangular_solve::{solve_lower_triangular_in_place, solve_upper_triangular_in_place};
use faer::{Mat, MatMut, MatRef, Par, Spec};

use super::LinalgError;

/// Dense symmetric matrix, both triangles stored.
#[derive(Clone, Debug)]
pub struct DenseSpd {
    values: Mat<f64>,
}

impl DenseSpd {
    pub fn zeros(n: usize) -> Self {
        Self { values: Mat::zeros(n, n) }
    }

    /// Builds from the lower triangle given by `f(i, j)` with `i >= j`.
    pub fn from_lower_fn(n: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut values = Mat::zeros(n, n);
        for j in 0..n {
            for i in j..n {
                let v = f(i, j);
                values[(i, j)] = v;
                values[(j, i)] = v;
            }
        }
        Self { values }
    }

    pub fn from_mat(values: Mat<f64>) -> Result<Self, LinalgError> {
        if values.nrows() != values.ncols() {
            return Err(LinalgError::Dimension(format!(
                "matrix is {}x{}, expected square",
                values.nrows(),
                values.ncols()
            )));
        }
        Ok(Self { values })
    }

    pub fn n(&self) -> usize {
        self.values.nrows()
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[(i, j)]
    }

    pub fn as_mat(&self) -> MatRef<'_, f64> {
        self.values.as_ref()
    }

    pub fn add_diagonal(&mut self, eps: f64) {
        for i in 0..self.n() {
            self.values[(i, i)] += eps;
        }
    }

    pub fn mean_diagonal(&self) -> f64 {
        let n = self.n();
        (0..n).map(|i| self.values[(i, i)]).sum::<f64>() / n.max(1) as f64
    }

    pub fn max_abs(&self) -> f64 {
        let mut m = 0.0f64;
        for j in 0..self.n() {
            for i in 0..self.n() {
                m = m.max(self.values[(i, j)].abs());
            }
        }
        m
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        let n = self.n();
        let mut out = vec![0.0; n];
        for j in 0..n {
            let xj = x[j];
            let col = self.values.col(j);
            for i in 0..n {
                out[i] += col[i] * xj;
            }
        }
        out
    }

    pub fn cholesky(&self) -> Result<DenseCholesky, LinalgError> {
        DenseCholesky::new(self)
    }
}

/// Lower Cholesky factor `A = L L^T`.
#[derive(Clone, Debug)]
pub struct DenseCholesky {
    l: Mat<f64>,
    logdet: f64,
}

impl DenseCholesky {
    pub fn new(a: &DenseSpd) -> Result<Self, LinalgError> {
        let n = a.n();
        let mut l = a.values.clone();
        let mut mem = MemBuffer::new(cholesky_in_place_scratch::<f64>(n, Par::Seq, Spec::default()));
        let stack = MemStack::new(&mut mem);
        cholesky_in_place(l.as_mut(), Default::default(), Par::Seq, stack, Spec::default())
            .map_err(|LltError::NonPositivePivot { index }| LinalgError::Indefinite { pivot: index })?;
        for j in 0..n {
            for i in 0..j {
                l[(i, j)] = 0.0;
            }
        }
        let logdet = 2.0 * (0..n).map(|i| l[(i, i)].ln()).sum::<f64>();
        if !logdet.is_finite() {
            return Err(LinalgError::NonFinite("log-determinant".into()));
        }
        Ok(Self { l, logdet })
    }

    pub fn n(&self) -> usize {
        self.l.nrows()
    }

    pub fn logdet(&self) -> f64 {
        self.logdet
    }

    pub fn factor(&self) -> MatRef<'_, f64> {
        self.l.as_ref()
    }

    /// `L^{-1} b`.
    pub fn solve_lower(&self, b: &[f64]) -> Vec<f64> {
        let mut x = Mat::from_fn(b.len(), 1, |i, _| b[i]);
        solve_lower_triangular_in_place(self.l.as_ref(), x.as_mut(), Par::Seq);
        x.col(0).iter().copied().collect()
    }

    /// `L^{-1} B` in place.
    pub fn solve_lower_mat(&self, b: MatMut<'_, f64>) {
        solve_lower_triangular_in_place(self.l.as_ref(), b, Par::Seq);
    }

    /// `A^{-1} b`.
    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let mut x = Mat::from_fn(b.len(), 1, |i, _| b[i]);
        self.solve_mat(x.as_mut());
        x.col(0).iter().copied().collect()
    }

    /// `A^{-1} B` in place.
    pub fn solve_mat(&self, mut b: MatMut<'_, f64>) {
        solve_lower_triangular_in_place(self.l.as_ref(), b.as_mut(), Par::Seq);
        solve_upper_triangular_in_place(self.l.transpose(), b, Par::Seq);
    }

    /// `L u`.
    pub fn lower_mul(&self, u: &[f64]) -> Vec<f64> {
        let n = self.n();
        let mut out = vec![0.0; n];
        for j in 0..n {
            let uj = u[j];
            let col = self.l.col(j);
            for i in j..n {
                out[i] += col[i] * uj;
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spd(n: usize, seed: u64) -> DenseSpd {
        let mut state = seed;
        let mut next = || {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((state >> 11) as f64 / (1u64 << 53) as f64) - 0.5
        };
        let b = Mat::from_fn(n, n, |_, _| next());
        let a = &b * b.transpose() + Mat::<f64>::identity(n, n) * faer::Scale(0.5);
        DenseSpd::from_mat(a).unwrap()
    }

    #[test]
    fn identity_examples() {
        let a = DenseSpd::from_mat(Mat::identity(5, 5)).unwrap();
        let f = a.cholesky().unwrap();
        assert_eq!(f.logdet(), 0.0);
        let b = [1.0, -2.0, 3.0, 0.5, 0.0];
        assert_eq!(f.solve(&b), b.to_vec());
    }

    #[test]
    fn diagonal_logdet() {
        let a = DenseSpd::from_lower_fn(2, |i, j| if i == j { [4.0, 9.0][i] } else { 0.0 });
        let f = a.cholesky().unwrap();
        assert!((f.logdet() - 36f64.ln()).abs() < 1e-14);
    }

    #[test]
    fn random_solve_residual_and_reconstruction() {
        let a = spd(20, 7);
        let f = a.cholesky().unwrap();
        let b: Vec<f64> = (0..20).map(|i| (i as f64).sin()).collect();
        let x = f.solve(&b);
        let ax = a.matvec(&x);
        let res: f64 = ax.iter().zip(&b).map(|(p, q)| (p - q).powi(2)).sum::<f64>().sqrt();
        let nb: f64 = b.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!(res / nb <= 1e-10);

        let l = f.factor();
        let rec = l * l.transpose();
        let mut err = 0.0f64;
        for j in 0..20 {
            for i in 0..20 {
                err = err.max((rec[(i, j)] - a.get(i, j)).abs());
            }
        }
        assert!(err <= 1e-8 * a.max_abs());
    }

    #[test]
    fn lower_solve_and_multiply_invert_each_other() {
        let a = spd(12, 3);
        let f = a.cholesky().unwrap();
        let u: Vec<f64> = (0..12).map(|i| 1.0 / (1.0 + i as f64)).collect();
        let back = f.solve_lower(&f.lower_mul(&u));
        for (p, q) in back.iter().zip(&u) {
            assert!((p - q).abs() < 1e-12);
        }
    }

    #[test]
    fn indefinite_reports_pivot() {
        let a = DenseSpd::from_lower_fn(3, |i, j| match (i, j) {
            (0, 0) => 1.0,
            (1, 1) => 1.0,
            (1, 0) => 2.0,
            (2, 2) => 1.0,
            _ => 0.0,
        });
        match a.cholesky() {
            Err(LinalgError::Indefinite { pivot }) => assert_eq!(pivot, 1),
            other => panic!("expected indefinite error, got {other:?}"),
        }
    }
}
