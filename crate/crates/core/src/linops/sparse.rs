//! Compressed sparse row storage for real matrices.

use nalgebra::DMatrix;

use crate::error::{LyapError, Result};

/// Real sparse matrix in CSR layout.
///
/// Column indices are strictly increasing inside each row, so duplicates
/// cannot occur.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseMatrix {
    nrows: usize,
    ncols: usize,
    row_offsets: Vec<usize>,
    col_indices: Vec<usize>,
    values: Vec<f64>,
}

impl SparseMatrix {
    /// Builds a matrix from raw CSR arrays, validating every invariant.
    pub fn try_from_csr(
        nrows: usize,
        ncols: usize,
        row_offsets: Vec<usize>,
        col_indices: Vec<usize>,
        values: Vec<f64>,
    ) -> Result<Self> {
        if row_offsets.len() != nrows + 1 {
            return Err(LyapError::InvalidSparse(format!(
                "expected {} row offsets, got {}",
                nrows + 1,
                row_offsets.len()
            )));
        }
        if row_offsets[0] != 0 || *row_offsets.last().unwrap() != col_indices.len() {
            return Err(LyapError::InvalidSparse("row offsets do not span the index array".into()));
        }
        if col_indices.len() != values.len() {
            return Err(LyapError::InvalidSparse("index/value length mismatch".into()));
        }
        for r in 0..nrows {
            let (lo, hi) = (row_offsets[r], row_offsets[r + 1]);
            if lo > hi {
                return Err(LyapError::InvalidSparse(format!("row offsets decrease at row {r}")));
            }
            let cols = &col_indices[lo..hi];
            if cols.iter().any(|&c| c >= ncols) {
                return Err(LyapError::InvalidSparse(format!("column index out of range in row {r}")));
            }
            if cols.windows(2).any(|w| w[0] >= w[1]) {
                return Err(LyapError::InvalidSparse(format!(
                    "column indices not strictly increasing in row {r}"
                )));
            }
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(LyapError::InvalidSparse("non-finite entry".into()));
        }
        Ok(Self { nrows, ncols, row_offsets, col_indices, values })
    }

    /// Assembles from (row, col, value) triplets; repeated positions are summed.
    pub fn from_triplets(nrows: usize, ncols: usize, triplets: &[(usize, usize, f64)]) -> Result<Self> {
        let mut sorted: Vec<(usize, usize, f64)> = triplets.to_vec();
        for &(r, c, _) in &sorted {
            if r >= nrows || c >= ncols {
                return Err(LyapError::InvalidSparse(format!(
                    "triplet ({r}, {c}) outside {nrows}x{ncols}"
                )));
            }
        }
        sorted.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
        let mut row_offsets = vec![0usize; nrows + 1];
        let mut col_indices = Vec::with_capacity(sorted.len());
        let mut values = Vec::with_capacity(sorted.len());
        let mut last: Option<(usize, usize)> = None;
        for (r, c, v) in sorted {
            if last == Some((r, c)) {
                *values.last_mut().unwrap() += v;
                continue;
            }
            col_indices.push(c);
            values.push(v);
            row_offsets[r + 1] += 1;
            last = Some((r, c));
        }
        for r in 0..nrows {
            row_offsets[r + 1] += row_offsets[r];
        }
        Self::try_from_csr(nrows, ncols, row_offsets, col_indices, values)
    }

    pub fn identity(n: usize) -> Self {
        Self::from_diagonal(&vec![1.0; n])
    }

    pub fn from_diagonal(d: &[f64]) -> Self {
        let n = d.len();
        Self {
            nrows: n,
            ncols: n,
            row_offsets: (0..=n).collect(),
            col_indices: (0..n).collect(),
            values: d.to_vec(),
        }
    }

    /// Matrix with constant sub-, main and super-diagonal (MATLAB `tridiag(a, b, c)` order).
    pub fn tridiag(n: usize, sub: f64, diag: f64, sup: f64) -> Self {
        let mut t = Vec::with_capacity(3 * n);
        for i in 0..n {
            if i > 0 && sub != 0.0 {
                t.push((i, i - 1, sub));
            }
            if diag != 0.0 {
                t.push((i, i, diag));
            }
            if i + 1 < n && sup != 0.0 {
                t.push((i, i + 1, sup));
            }
        }
        Self::from_triplets(n, n, &t).expect("tridiagonal pattern is valid")
    }

    pub fn from_dense(m: &DMatrix<f64>) -> Self {
        let mut t = Vec::new();
        for i in 0..m.nrows() {
            for j in 0..m.ncols() {
                if m[(i, j)] != 0.0 {
                    t.push((i, j, m[(i, j)]));
                }
            }
        }
        Self::from_triplets(m.nrows(), m.ncols(), &t).expect("dense pattern is valid")
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row_offsets(&self) -> &[usize] {
        &self.row_offsets
    }

    pub fn col_indices(&self) -> &[usize] {
        &self.col_indices
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn is_square(&self) -> bool {
        self.nrows == self.ncols
    }

    /// Iterates `(col, value)` over the stored entries of row `r`.
    pub fn row(&self, r: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let (lo, hi) = (self.row_offsets[r], self.row_offsets[r + 1]);
        self.col_indices[lo..hi].iter().copied().zip(self.values[lo..hi].iter().copied())
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        let (lo, hi) = (self.row_offsets[r], self.row_offsets[r + 1]);
        match self.col_indices[lo..hi].binary_search(&c) {
            Ok(k) => self.values[lo + k],
            Err(_) => 0.0,
        }
    }

    pub fn triplets(&self) -> Vec<(usize, usize, f64)> {
        (0..self.nrows).flat_map(|r| self.row(r).map(move |(c, v)| (r, c, v))).collect()
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.nrows.min(self.ncols)).map(|i| self.get(i, i)).collect()
    }

    pub fn transpose(&self) -> Self {
        let t: Vec<_> = self.triplets().into_iter().map(|(r, c, v)| (c, r, v)).collect();
        Self::from_triplets(self.ncols, self.nrows, &t).expect("transpose keeps validity")
    }

    pub fn scale(&self, alpha: f64) -> Self {
        let mut out = self.clone();
        out.values.iter_mut().for_each(|v| *v *= alpha);
        out
    }

    /// `alpha * self + beta * other`.
    pub fn add(&self, alpha: f64, other: &Self, beta: f64) -> Result<Self> {
        if self.nrows != other.nrows || self.ncols != other.ncols {
            return Err(LyapError::DimensionMismatch(format!(
                "cannot add {}x{} and {}x{}",
                self.nrows, self.ncols, other.nrows, other.ncols
            )));
        }
        let mut t: Vec<_> = self.triplets().into_iter().map(|(r, c, v)| (r, c, alpha * v)).collect();
        t.extend(other.triplets().into_iter().map(|(r, c, v)| (r, c, beta * v)));
        Self::from_triplets(self.nrows, self.ncols, &t)
    }

    /// Kronecker product `self ⊗ other`.
    pub fn kron(&self, other: &Self) -> Self {
        let (p, q) = (other.nrows, other.ncols);
        let mut t = Vec::with_capacity(self.nnz() * other.nnz());
        for (r1, c1, v1) in self.triplets() {
            for (r2, c2, v2) in other.triplets() {
                t.push((r1 * p + r2, c1 * q + c2, v1 * v2));
            }
        }
        Self::from_triplets(self.nrows * p, self.ncols * q, &t).expect("kron keeps validity")
    }

    /// Sparse-sparse product.
    pub fn matmul(&self, other: &Self) -> Result<Self> {
        if self.ncols != other.nrows {
            return Err(LyapError::DimensionMismatch("inner dimensions differ".into()));
        }
        let mut t = Vec::new();
        for r in 0..self.nrows {
            for (k, a) in self.row(r) {
                for (c, b) in other.row(k) {
                    t.push((r, c, a * b));
                }
            }
        }
        Self::from_triplets(self.nrows, other.ncols, &t)
    }

    /// Dense product `self * x`.
    pub fn apply(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        assert_eq!(self.ncols, x.nrows(), "sparse apply: dimension mismatch");
        let mut y = DMatrix::zeros(self.nrows, x.ncols());
        for j in 0..x.ncols() {
            let xj = x.column(j);
            for r in 0..self.nrows {
                let mut acc = 0.0;
                for (c, v) in self.row(r) {
                    acc += v * xj[c];
                }
                y[(r, j)] = acc;
            }
        }
        y
    }

    pub fn apply_vec(&self, x: &[f64]) -> Vec<f64> {
        (0..self.nrows).map(|r| self.row(r).map(|(c, v)| v * x[c]).sum()).collect()
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.nrows, self.ncols);
        for (r, c, v) in self.triplets() {
            m[(r, c)] = v;
        }
        m
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |acc, v| acc.max(v.abs()))
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Exact structural and numerical symmetry within `tol * max_abs`.
    pub fn is_symmetric(&self, tol: f64) -> bool {
        if !self.is_square() {
            return false;
        }
        let scale = self.max_abs().max(f64::MIN_POSITIVE);
        (0..self.nrows).all(|r| self.row(r).all(|(c, v)| (v - self.get(c, r)).abs() <= tol * scale))
    }

    /// Symmetric permutation `P A Pᵀ` where `perm[new] = old`.
    pub fn permute_symmetric(&self, perm: &[usize]) -> Self {
        let mut inv = vec![0usize; perm.len()];
        for (new, &old) in perm.iter().enumerate() {
            inv[old] = new;
        }
        let t: Vec<_> = self.triplets().into_iter().map(|(r, c, v)| (inv[r], inv[c], v)).collect();
        Self::from_triplets(self.nrows, self.ncols, &t).expect("permutation keeps validity")
    }
}
