use std::sync::Arc;

use faer::dyn_stack::{MemBuffer, MemStack};
use faer::linalg::cholesky::llt::factor::LltError;
use faer::sparse::linalg::cholesky::{
    factorize_symbolic_cholesky, CholeskySymbolicParams, LltRef, SymbolicCholesky, SymbolicCholeskyRaw,
    SymmetricOrdering,
};
use faer::sparse::linalg::cholesky::simplicial::SimplicialLltRef;
use faer::sparse::linalg::cholesky::supernodal::SupernodalLltRef;
use faer::sparse::{SparseColMatRef, SymbolicSparseColMatRef};
use faer::{Conj, Mat, Par, Side, Spec};

use super::LinalgError;
use crate::covkernel::TaperSpec;

/// Upper-triangle CSC structure of the taper-nonzero pairs, with the
/// fill-reducing symbolic analysis attached.
#[derive(Debug)]
pub struct SparsePattern {
    n: usize,
    col_ptr: Vec<usize>,
    row_idx: Vec<usize>,
    dist: Vec<f64>,
    symbolic: SymbolicCholesky<usize>,
}

impl SparsePattern {
    /// Pairs `(i, j)` with `i <= j` listed per column; rows must be sorted and
    /// include the diagonal.
    pub fn from_upper_csc(n: usize, col_ptr: Vec<usize>, row_idx: Vec<usize>, dist: Vec<f64>) -> Result<Self, LinalgError> {
        if col_ptr.len() != n + 1 || row_idx.len() != col_ptr[n] || dist.len() != row_idx.len() {
            return Err(LinalgError::Dimension("inconsistent sparse pattern arrays".into()));
        }
        for j in 0..n {
            let rows = &row_idx[col_ptr[j]..col_ptr[j + 1]];
            if rows.last() != Some(&j) || rows.windows(2).any(|w| w[0] >= w[1]) {
                return Err(LinalgError::Dimension(format!("column {j} is not sorted upper with a diagonal")));
            }
        }
        let sym = SymbolicSparseColMatRef::new_checked(n, n, &col_ptr, None, &row_idx);
        let symbolic = factorize_symbolic_cholesky(sym, Side::Upper, SymmetricOrdering::Amd, CholeskySymbolicParams::default())
            .map_err(|e| LinalgError::Dimension(format!("symbolic analysis failed: {e:?}")))?;
        Ok(Self { n, col_ptr, row_idx, dist, symbolic })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Stored entries of the upper half, diagonal included.
    pub fn nnz(&self) -> usize {
        self.row_idx.len()
    }

    /// Stored entries counting both triangles.
    pub fn nnz_full(&self) -> usize {
        2 * self.row_idx.len() - self.n
    }

    pub fn col_ptr(&self) -> &[usize] {
        &self.col_ptr
    }

    pub fn row_idx(&self) -> &[usize] {
        &self.row_idx
    }

    /// Euclidean distance of each stored pair.
    pub fn distances(&self) -> &[f64] {
        &self.dist
    }

    /// Iterates `(i, j, h)` over stored upper entries in storage order.
    pub fn entries(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.n).flat_map(move |j| {
            (self.col_ptr[j]..self.col_ptr[j + 1]).map(move |k| (self.row_idx[k], j, self.dist[k]))
        })
    }

    /// True when both patterns describe the same index structure.
    pub fn same_structure(&self, other: &SparsePattern) -> bool {
        self.n == other.n && self.col_ptr == other.col_ptr && self.row_idx == other.row_idx
    }
}

/// Pattern of pairs closer than the taper range (all pairs without a taper).
pub fn build_pattern(locations: &[[f64; 2]], taper: &TaperSpec) -> Result<SparsePattern, LinalgError> {
    let n = locations.len();
    let radius = taper.radius();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| locations[a][0].total_cmp(&locations[b][0]).then(a.cmp(&b)));
    let mut cols: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
    for (pos, &a) in order.iter().enumerate() {
        cols[a].push((a, 0.0));
        for &b in &order[pos + 1..] {
            let dx = locations[b][0] - locations[a][0];
            if dx >= radius {
                break;
            }
            let h = dx.hypot(locations[b][1] - locations[a][1]);
            if h < radius {
                let (i, j) = if a < b { (a, b) } else { (b, a) };
                cols[j].push((i, h));
            }
        }
    }
    let mut col_ptr = Vec::with_capacity(n + 1);
    let mut row_idx = Vec::new();
    let mut dist = Vec::new();
    col_ptr.push(0);
    for mut col in cols {
        col.sort_by_key(|&(i, _)| i);
        for (i, h) in col {
            row_idx.push(i);
            dist.push(h);
        }
        col_ptr.push(row_idx.len());
    }
    SparsePattern::from_upper_csc(n, col_ptr, row_idx, dist)
}

/// Symmetric matrix on a shared [`SparsePattern`], upper half stored.
#[derive(Clone, Debug)]
pub struct SparseSpd {
    pattern: Arc<SparsePattern>,
    values: Vec<f64>,
}

impl SparseSpd {
    pub fn new(pattern: Arc<SparsePattern>, values: Vec<f64>) -> Result<Self, LinalgError> {
        if values.len() != pattern.nnz() {
            return Err(LinalgError::Dimension(format!(
                "{} values for a pattern with {} entries",
                values.len(),
                pattern.nnz()
            )));
        }
        Ok(Self { pattern, values })
    }

    pub fn pattern(&self) -> &Arc<SparsePattern> {
        &self.pattern
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn n(&self) -> usize {
        self.pattern.n
    }

    fn diag_positions(&self) -> impl Iterator<Item = usize> + '_ {
        self.pattern.col_ptr[1..].iter().map(|&p| p - 1)
    }

    pub fn add_diagonal(&mut self, eps: f64) {
        let idx: Vec<usize> = self.diag_positions().collect();
        for k in idx {
            self.values[k] += eps;
        }
    }

    pub fn mean_diagonal(&self) -> f64 {
        self.diag_positions().map(|k| self.values[k]).sum::<f64>() / self.n().max(1) as f64
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (i, j) = if i <= j { (i, j) } else { (j, i) };
        let p = &self.pattern;
        let rows = &p.row_idx[p.col_ptr[j]..p.col_ptr[j + 1]];
        match rows.binary_search(&i) {
            Ok(k) => self.values[p.col_ptr[j] + k],
            Err(_) => 0.0,
        }
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        let p = &self.pattern;
        let mut out = vec![0.0; p.n];
        for j in 0..p.n {
            for k in p.col_ptr[j]..p.col_ptr[j + 1] {
                let i = p.row_idx[k];
                let v = self.values[k];
                out[i] += v * x[j];
                if i != j {
                    out[j] += v * x[i];
                }
            }
        }
        out
    }

    pub fn to_dense(&self) -> Mat<f64> {
        let mut m = Mat::zeros(self.n(), self.n());
        for ((i, j, _), &v) in self.pattern.entries().zip(&self.values) {
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
        m
    }

    pub fn cholesky(&self) -> Result<SparseCholesky, LinalgError> {
        SparseCholesky::new(self)
    }
}

/// Numeric sparse Cholesky factor reusing the pattern's symbolic analysis.
#[derive(Clone, Debug)]
pub struct SparseCholesky {
    pattern: Arc<SparsePattern>,
    l_values: Vec<f64>,
    logdet: f64,
}

impl SparseCholesky {
    pub fn new(a: &SparseSpd) -> Result<Self, LinalgError> {
        let pattern = a.pattern.clone();
        let symbolic = &pattern.symbolic;
        let n = pattern.n;
        let mut l_values = vec![0.0; symbolic.len_val()];
        let mut mem = MemBuffer::new(symbolic.factorize_numeric_llt_scratch::<f64>(Par::Seq, Spec::default()));
        let stack = MemStack::new(&mut mem);
        let sym = SymbolicSparseColMatRef::new_checked(n, n, &pattern.col_ptr, None, &pattern.row_idx);
        let mat = SparseColMatRef::new(sym, &a.values);
        let result = symbolic.factorize_numeric_llt(
            &mut l_values,
            mat,
            Side::Upper,
            Default::default(),
            Par::Seq,
            stack,
            Spec::default(),
        );
        if let Err(LltError::NonPositivePivot { index }) = result {
            // The simplicial kernel reports 1-based pivots, the supernodal one 0-based.
            let index = match symbolic.raw() {
                SymbolicCholeskyRaw::Simplicial(_) => index - 1,
                SymbolicCholeskyRaw::Supernodal(_) => index,
            };
            let pivot = symbolic.perm().map_or(index, |p| p.arrays().0[index]);
            return Err(LinalgError::Indefinite { pivot });
        }
        let logdet = 2.0 * factor_log_diag_sum(symbolic, &l_values);
        if !logdet.is_finite() {
            return Err(LinalgError::NonFinite("log-determinant".into()));
        }
        Ok(Self { pattern, l_values, logdet })
    }

    pub fn logdet(&self) -> f64 {
        self.logdet
    }

    /// Stored entries of the factor (fill included).
    pub fn factor_nnz(&self) -> usize {
        self.l_values.len()
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let mut x = Mat::from_fn(b.len(), 1, |i, _| b[i]);
        self.solve_mat(x.as_mut());
        x.col(0).iter().copied().collect()
    }

    pub fn solve_mat(&self, b: faer::MatMut<'_, f64>) {
        let symbolic = &self.pattern.symbolic;
        let mut mem = MemBuffer::new(symbolic.solve_in_place_scratch::<f64>(b.ncols(), Par::Seq));
        let stack = MemStack::new(&mut mem);
        LltRef::new(symbolic, &self.l_values).solve_in_place_with_conj(Conj::No, b, Par::Seq, stack);
    }
}

fn factor_log_diag_sum(symbolic: &SymbolicCholesky<usize>, values: &[f64]) -> f64 {
    match symbolic.raw() {
        SymbolicCholeskyRaw::Simplicial(s) => {
            let l = SimplicialLltRef::new(s, values);
            let factor = s.factor();
            let (col_ptr, row_idx) = (factor.col_ptr(), factor.row_idx());
            let vals = l.values();
            (0..s.nrows())
                .map(|j| {
                    let k = (col_ptr[j]..col_ptr[j + 1]).find(|&k| row_idx[k] == j).expect("diagonal entry");
                    vals[k].ln()
                })
                .sum()
        }
        SymbolicCholeskyRaw::Supernodal(s) => {
            let l = SupernodalLltRef::new(s, values);
            (0..s.n_supernodes())
                .map(|k| {
                    let node = l.supernode(k);
                    let m = node.val();
                    (0..m.ncols()).map(|c| m[(c, c)].ln()).sum::<f64>()
                })
                .sum()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::covkernel::TaperFamily;
    use crate::linalg::DenseSpd;

    fn grid(m: usize) -> Vec<[f64; 2]> {
        (0..m * m).map(|k| [(k % m) as f64 / m as f64, (k / m) as f64 / m as f64]).collect()
    }

    #[test]
    fn pattern_extremes() {
        let locs = grid(5);
        let tiny = build_pattern(&locs, &TaperSpec::new(TaperFamily::Wendland1, 0.01).unwrap()).unwrap();
        assert_eq!(tiny.nnz(), 25);
        let big = build_pattern(&locs, &TaperSpec::new(TaperFamily::Wendland1, 10.0).unwrap()).unwrap();
        assert_eq!(big.nnz_full(), 625);
        let none = build_pattern(&locs, &TaperSpec::none()).unwrap();
        assert!(none.same_structure(&big));
    }

    #[test]
    fn collinear_tridiagonal() {
        let locs = [[0.0, 0.0], [1.0, 0.0], [2.0, 0.0]];
        let p = build_pattern(&locs, &TaperSpec::new(TaperFamily::Spherical, 1.5).unwrap()).unwrap();
        assert_eq!(p.nnz_full(), 7);
        assert_eq!(p.row_idx(), &[0, 0, 1, 1, 2]);
    }

    #[test]
    fn pattern_matches_brute_force() {
        let locs: Vec<[f64; 2]> = (0..60).map(|k| [((k * 37) % 61) as f64 / 61.0, ((k * 17) % 53) as f64 / 53.0]).collect();
        let delta = 0.23;
        let p = build_pattern(&locs, &TaperSpec::new(TaperFamily::Wendland2, delta).unwrap()).unwrap();
        let mut expected = 0;
        for j in 0..60 {
            for i in 0..=j {
                let h = (locs[i][0] - locs[j][0]).hypot(locs[i][1] - locs[j][1]);
                if h < delta {
                    expected += 1;
                }
            }
        }
        assert_eq!(p.nnz(), expected);
        for (i, j, h) in p.entries() {
            assert!(i <= j && h < delta);
        }
    }

    fn tapered_matrix(locs: &[[f64; 2]], delta: f64) -> SparseSpd {
        let spec = TaperSpec::new(TaperFamily::Wendland1, delta).unwrap();
        let p = Arc::new(build_pattern(locs, &spec).unwrap());
        let values = p.entries().map(|(_, _, h)| (-h / 0.3).exp() * spec.eval(h)).collect();
        SparseSpd::new(p, values).unwrap()
    }

    #[test]
    fn sparse_agrees_with_dense() {
        let locs = grid(12);
        let a = tapered_matrix(&locs, 0.35);
        let f = a.cholesky().unwrap();
        let dense = DenseSpd::from_mat(a.to_dense()).unwrap().cholesky().unwrap();
        assert!((f.logdet() - dense.logdet()).abs() <= 1e-10 * dense.logdet().abs().max(1.0));
        let b: Vec<f64> = (0..locs.len()).map(|i| (0.3 * i as f64).cos()).collect();
        let xs = f.solve(&b);
        let xd = dense.solve(&b);
        let scale = xd.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        for (p, q) in xs.iter().zip(&xd) {
            assert!((p - q).abs() <= 1e-8 * scale);
        }
    }

    #[test]
    fn indefinite_sparse_reports_original_index() {
        let locs = [[0.0, 0.0], [1.0, 0.0], [2.0, 0.0]];
        let p = Arc::new(build_pattern(&locs, &TaperSpec::new(TaperFamily::Spherical, 1.5).unwrap()).unwrap());
        let a = SparseSpd::new(p, vec![1.0, 2.0, 1.0, 0.0, 1.0]).unwrap();
        match a.cholesky() {
            Err(LinalgError::Indefinite { pivot }) => assert!(pivot < 3),
            other => panic!("expected indefinite error, got {other:?}"),
        }
    }

    #[test]
    fn matvec_and_get_agree_with_dense() {
        let locs = grid(6);
        let a = tapered_matrix(&locs, 0.4);
        let d = a.to_dense();
        let x: Vec<f64> = (0..36).map(|i| i as f64 * 0.1 - 1.0).collect();
        let y = a.matvec(&x);
        for i in 0..36 {
            let expect: f64 = (0..36).map(|j| d[(i, j)] * x[j]).sum();
            assert!((y[i] - expect).abs() < 1e-12);
            assert_eq!(a.get(i, (i + 7) % 36), d[(i, (i + 7) % 36)]);
        }
    }
}
