//! Sparse LU factorization with reusable solves.
//!
//! Left-looking Gilbert–Peierls elimination on a symmetrically permuted copy
//! of the matrix. Reverse Cuthill–McKee keeps the fill close to a band for the
//! stencil matrices this crate generates.

use std::collections::VecDeque;

use nalgebra::DMatrix;

use super::sparse::SparseMatrix;
use crate::error::{LyapError, Result};

/// Fill-reducing symmetric ordering applied before elimination.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum FillOrdering {
    Natural,
    #[default]
    ReverseCuthillMcKee,
}

/// Row pivoting rule.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Pivoting {
    /// Threshold partial pivoting: keep the diagonal when
    /// `|a_kk| >= threshold * max_i |a_ik|`.
    Partial { threshold: f64 },
    /// No row exchanges (SPD matrices).
    Diagonal,
}

impl Default for Pivoting {
    fn default() -> Self {
        Pivoting::Partial { threshold: 0.1 }
    }
}

#[derive(Debug, Clone)]
struct Csc {
    col_ptr: Vec<usize>,
    row_idx: Vec<usize>,
    vals: Vec<f64>,
}

impl Csc {
    fn with_capacity(n: usize, nnz: usize) -> Self {
        let mut col_ptr = Vec::with_capacity(n + 1);
        col_ptr.push(0);
        Self { col_ptr, row_idx: Vec::with_capacity(nnz), vals: Vec::with_capacity(nnz) }
    }

    fn col(&self, j: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let (lo, hi) = (self.col_ptr[j], self.col_ptr[j + 1]);
        self.row_idx[lo..hi].iter().copied().zip(self.vals[lo..hi].iter().copied())
    }
}

/// LU factors of a fixed square sparse matrix, reusable for any number of
/// right-hand sides.
#[derive(Debug, Clone)]
pub struct SparseLu {
    n: usize,
    /// `perm[new] = old` (applied to rows and columns).
    perm: Vec<usize>,
    /// `pinv[row of permuted matrix] = pivot step`.
    pinv: Vec<usize>,
    /// Unit lower factor without its diagonal, rows in pivot order.
    l: Csc,
    /// Upper factor, diagonal stored last in each column.
    u: Csc,
}

impl SparseLu {
    pub fn new(a: &SparseMatrix) -> Result<Self> {
        Self::with_options(a, FillOrdering::default(), Pivoting::default())
    }

    pub fn with_options(a: &SparseMatrix, ordering: FillOrdering, pivoting: Pivoting) -> Result<Self> {
        if !a.is_square() {
            return Err(LyapError::DimensionMismatch(format!(
                "LU needs a square matrix, got {}x{}",
                a.nrows(),
                a.ncols()
            )));
        }
        let n = a.nrows();
        let perm = match ordering {
            FillOrdering::Natural => (0..n).collect(),
            FillOrdering::ReverseCuthillMcKee => reverse_cuthill_mckee(a),
        };
        let permuted = a.permute_symmetric(&perm);
        // CSR of the transpose is CSC of the matrix itself.
        let cols = permuted.transpose();
        let tol_abs = n as f64 * f64::EPSILON * a.max_abs();

        let mut l = Csc::with_capacity(n, 4 * a.nnz());
        let mut u = Csc::with_capacity(n, 4 * a.nnz());
        let mut pinv: Vec<Option<usize>> = vec![None; n];
        let mut x = vec![0.0; n];
        let mut mark = vec![usize::MAX; n];
        let mut topo: Vec<usize> = Vec::with_capacity(n);
        let mut stack: Vec<(usize, usize)> = Vec::new();

        for k in 0..n {
            // Pattern of L \ A(:,k) in topological order.
            topo.clear();
            for (i, _) in cols.row(k) {
                if mark[i] == k {
                    continue;
                }
                mark[i] = k;
                stack.push((i, 0));
                while let Some(&mut (node, ref mut child)) = stack.last_mut() {
                    let next = pinv[node].and_then(|j| {
                        let lo = l.col_ptr[j];
                        let hi = l.col_ptr[j + 1];
                        while lo + *child < hi {
                            let r = l.row_idx[lo + *child];
                            *child += 1;
                            if mark[r] != k {
                                return Some(r);
                            }
                        }
                        None
                    });
                    match next {
                        Some(r) => {
                            mark[r] = k;
                            stack.push((r, 0));
                        }
                        None => {
                            topo.push(node);
                            stack.pop();
                        }
                    }
                }
            }
            for (i, v) in cols.row(k) {
                x[i] = v;
            }
            for &i in topo.iter().rev() {
                if let Some(j) = pinv[i] {
                    let xi = x[i];
                    if xi != 0.0 {
                        let (lo, hi) = (l.col_ptr[j], l.col_ptr[j + 1]);
                        for p in lo..hi {
                            x[l.row_idx[p]] -= l.vals[p] * xi;
                        }
                    }
                }
            }

            let mut ipiv = None;
            let mut amax = 0.0f64;
            for &i in &topo {
                if pinv[i].is_none() && x[i].abs() > amax {
                    amax = x[i].abs();
                    ipiv = Some(i);
                }
            }
            let ipiv = match pivoting {
                Pivoting::Diagonal => {
                    if pinv[k].is_none() && x[k].abs() > tol_abs {
                        Some(k)
                    } else {
                        None
                    }
                }
                Pivoting::Partial { threshold } => {
                    if amax <= tol_abs {
                        None
                    } else if pinv[k].is_none() && x[k].abs() >= threshold * amax {
                        Some(k)
                    } else {
                        ipiv
                    }
                }
            };
            let Some(ipiv) = ipiv else {
                return Err(LyapError::SingularMatrix { row: perm[k] });
            };

            let pivot = x[ipiv];
            for &i in &topo {
                if let Some(j) = pinv[i] {
                    if x[i] != 0.0 {
                        u.row_idx.push(j);
                        u.vals.push(x[i]);
                    }
                }
            }
            u.row_idx.push(k);
            u.vals.push(pivot);
            u.col_ptr.push(u.row_idx.len());
            pinv[ipiv] = Some(k);
            for &i in &topo {
                if pinv[i].is_none() && x[i] != 0.0 {
                    l.row_idx.push(i);
                    l.vals.push(x[i] / pivot);
                }
                x[i] = 0.0;
            }
            l.col_ptr.push(l.row_idx.len());
        }

        let pinv: Vec<usize> = pinv.into_iter().map(|p| p.expect("every row pivoted")).collect();
        for r in l.row_idx.iter_mut() {
            *r = pinv[*r];
        }
        Ok(Self { n, perm, pinv, l, u })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    /// Number of stored entries in both factors.
    pub fn factor_nnz(&self) -> usize {
        self.l.vals.len() + self.u.vals.len()
    }

    /// Solves `A x = b` in place.
    pub fn solve_in_place(&self, b: &mut [f64]) {
        assert_eq!(b.len(), self.n, "LU solve: dimension mismatch");
        let n = self.n;
        let mut z = vec![0.0; n];
        for new in 0..n {
            z[self.pinv[new]] = b[self.perm[new]];
        }
        for j in 0..n {
            let zj = z[j];
            if zj != 0.0 {
                for (r, v) in self.l.col(j) {
                    z[r] -= v * zj;
                }
            }
        }
        for j in (0..n).rev() {
            let hi = self.u.col_ptr[j + 1] - 1;
            z[j] /= self.u.vals[hi];
            let zj = z[j];
            if zj != 0.0 {
                for p in self.u.col_ptr[j]..hi {
                    z[self.u.row_idx[p]] -= self.u.vals[p] * zj;
                }
            }
        }
        for new in 0..n {
            b[self.perm[new]] = z[new];
        }
    }

    /// Solves `A X = B` for a dense block of right-hand sides.
    pub fn solve(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        let mut x = b.clone();
        for mut col in x.column_iter_mut() {
            self.solve_in_place(col.as_mut_slice());
        }
        x
    }

    /// Cholesky factor `G` with `A = G Gᵀ`, valid when the factorization
    /// used natural ordering and diagonal pivoting on a symmetric matrix.
    pub fn cholesky_factor(&self) -> Result<LowerTriangular> {
        let identity_perm = self.perm.iter().enumerate().all(|(i, &p)| i == p)
            && self.pinv.iter().enumerate().all(|(i, &p)| i == p);
        if !identity_perm {
            return Err(LyapError::InvalidArgument(
                "Cholesky factor needs natural ordering without row exchanges".into(),
            ));
        }
        let n = self.n;
        let mut diag = Vec::with_capacity(n);
        for j in 0..n {
            let d = self.u.vals[self.u.col_ptr[j + 1] - 1];
            if !(d > 0.0) {
                return Err(LyapError::NotSpd);
            }
            diag.push(d.sqrt());
        }
        let mut col_ptr = vec![0];
        let mut row_idx = Vec::with_capacity(self.l.vals.len() + n);
        let mut vals = Vec::with_capacity(self.l.vals.len() + n);
        for j in 0..n {
            row_idx.push(j);
            vals.push(diag[j]);
            let mut below: Vec<(usize, f64)> = self.l.col(j).collect();
            below.sort_by_key(|&(r, _)| r);
            for (r, v) in below {
                row_idx.push(r);
                vals.push(v * diag[j]);
            }
            col_ptr.push(row_idx.len());
        }
        Ok(LowerTriangular { n, col_ptr, row_idx, vals })
    }
}

/// Sparse lower-triangular matrix in CSC layout, diagonal first in each column.
#[derive(Debug, Clone)]
pub struct LowerTriangular {
    n: usize,
    col_ptr: Vec<usize>,
    row_idx: Vec<usize>,
    vals: Vec<f64>,
}

impl LowerTriangular {
    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.n, self.n);
        for j in 0..self.n {
            for p in self.col_ptr[j]..self.col_ptr[j + 1] {
                m[(self.row_idx[p], j)] = self.vals[p];
            }
        }
        m
    }

    /// `L X`.
    pub fn mul(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let mut y = DMatrix::zeros(self.n, x.ncols());
        for c in 0..x.ncols() {
            for j in 0..self.n {
                let xj = x[(j, c)];
                for p in self.col_ptr[j]..self.col_ptr[j + 1] {
                    y[(self.row_idx[p], c)] += self.vals[p] * xj;
                }
            }
        }
        y
    }

    /// `Lᵀ X`.
    pub fn mul_transpose(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let mut y = DMatrix::zeros(self.n, x.ncols());
        for c in 0..x.ncols() {
            for j in 0..self.n {
                let mut acc = 0.0;
                for p in self.col_ptr[j]..self.col_ptr[j + 1] {
                    acc += self.vals[p] * x[(self.row_idx[p], c)];
                }
                y[(j, c)] = acc;
            }
        }
        y
    }

    /// `L⁻¹ X`.
    pub fn solve(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let mut y = x.clone();
        for c in 0..y.ncols() {
            for j in 0..self.n {
                let lo = self.col_ptr[j];
                y[(j, c)] /= self.vals[lo];
                let yj = y[(j, c)];
                for p in lo + 1..self.col_ptr[j + 1] {
                    y[(self.row_idx[p], c)] -= self.vals[p] * yj;
                }
            }
        }
        y
    }

    /// `L⁻ᵀ X`.
    pub fn solve_transpose(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let mut y = x.clone();
        for c in 0..y.ncols() {
            for j in (0..self.n).rev() {
                let lo = self.col_ptr[j];
                let mut acc = y[(j, c)];
                for p in lo + 1..self.col_ptr[j + 1] {
                    acc -= self.vals[p] * y[(self.row_idx[p], c)];
                }
                y[(j, c)] = acc / self.vals[lo];
            }
        }
        y
    }
}

/// Reverse Cuthill–McKee ordering of the symmetrized pattern; `perm[new] = old`.
pub fn reverse_cuthill_mckee(a: &SparseMatrix) -> Vec<usize> {
    let n = a.nrows();
    let mut adj: Vec<Vec<usize>> = vec![Vec::new(); n];
    for (r, c, _) in a.triplets() {
        if r != c {
            adj[r].push(c);
            adj[c].push(r);
        }
    }
    for nb in adj.iter_mut() {
        nb.sort_unstable();
        nb.dedup();
    }
    let degree: Vec<usize> = adj.iter().map(Vec::len).collect();
    for nb in adj.iter_mut() {
        nb.sort_by_key(|&v| (degree[v], v));
    }

    let mut visited = vec![false; n];
    let mut order = Vec::with_capacity(n);
    while order.len() < n {
        let seed = (0..n).filter(|&v| !visited[v]).min_by_key(|&v| (degree[v], v)).unwrap();
        let start = pseudo_peripheral(seed, &adj, &degree);
        let mut queue = VecDeque::from([start]);
        visited[start] = true;
        while let Some(v) = queue.pop_front() {
            order.push(v);
            for &w in &adj[v] {
                if !visited[w] {
                    visited[w] = true;
                    queue.push_back(w);
                }
            }
        }
    }
    order.reverse();
    order
}

fn bfs_levels(start: usize, adj: &[Vec<usize>]) -> Vec<Vec<usize>> {
    let mut seen = vec![false; adj.len()];
    seen[start] = true;
    let mut levels = vec![vec![start]];
    loop {
        let mut next = Vec::new();
        for &v in levels.last().unwrap() {
            for &w in &adj[v] {
                if !seen[w] {
                    seen[w] = true;
                    next.push(w);
                }
            }
        }
        if next.is_empty() {
            return levels;
        }
        levels.push(next);
    }
}

fn pseudo_peripheral(seed: usize, adj: &[Vec<usize>], degree: &[usize]) -> usize {
    let mut node = seed;
    let mut ecc = bfs_levels(node, adj).len();
    for _ in 0..8 {
        let levels = bfs_levels(node, adj);
        let candidate = *levels.last().unwrap().iter().min_by_key(|&&v| (degree[v], v)).unwrap();
        let cand_ecc = bfs_levels(candidate, adj).len();
        if cand_ecc <= ecc {
            break;
        }
        node = candidate;
        ecc = cand_ecc;
    }
    node
}

#[cfg(test)]
mod tests {
    use super::*;

    fn laplacian2d(h: usize) -> SparseMatrix {
        let d = SparseMatrix::tridiag(h, 1.0, -2.0, 1.0);
        let i = SparseMatrix::identity(h);
        i.kron(&d).add(1.0, &d.kron(&i), 1.0).unwrap()
    }

    #[test]
    fn diagonal_inverse() {
        let a = SparseMatrix::from_diagonal(&[-1.0, -2.0]);
        let lu = SparseLu::new(&a).unwrap();
        let x = lu.solve(&DMatrix::from_column_slice(2, 1, &[1.0, 1.0]));
        assert_eq!(x.as_slice(), &[-1.0, -0.5]);
    }

    #[test]
    fn zero_matrix_is_singular() {
        let a = SparseMatrix::from_triplets(2, 2, &[]).unwrap();
        assert!(matches!(SparseLu::new(&a), Err(LyapError::SingularMatrix { .. })));
    }

    #[test]
    fn numerically_singular_names_a_row() {
        // Rank one: second row is twice the first.
        let a = SparseMatrix::from_triplets(2, 2, &[(0, 0, 1.0), (0, 1, 2.0), (1, 0, 2.0), (1, 1, 4.0)])
            .unwrap();
        match SparseLu::new(&a) {
            Err(LyapError::SingularMatrix { row }) => assert!(row < 2),
            other => panic!("expected SingularMatrix, got {other:?}"),
        }
    }

    #[test]
    fn laplacian_residual() {
        let a = laplacian2d(10);
        let lu = SparseLu::new(&a).unwrap();
        let rhs = DMatrix::from_element(100, 1, 1.0);
        let x = lu.solve(&rhs);
        let res = (a.apply(&x) - &rhs).norm() / rhs.norm();
        assert!(res <= 1e-12, "residual {res}");
    }

    #[test]
    fn pivoting_handles_zero_diagonal() {
        let a = SparseMatrix::from_triplets(3, 3, &[(0, 1, 1.0), (1, 0, 1.0), (1, 2, 3.0), (2, 2, 2.0), (2, 0, -1.0)])
            .unwrap();
        let lu = SparseLu::new(&a).unwrap();
        let b = DMatrix::from_column_slice(3, 1, &[1.0, 2.0, 3.0]);
        let x = lu.solve(&b);
        assert!((a.apply(&x) - b).norm() < 1e-14);
    }

    #[test]
    fn rcm_is_a_permutation() {
        let a = laplacian2d(7);
        let mut p = reverse_cuthill_mckee(&a);
        p.sort_unstable();
        assert_eq!(p, (0..49).collect::<Vec<_>>());
    }

    #[test]
    fn cholesky_of_spd() {
        let e = SparseMatrix::from_dense(&DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 2.0]));
        let lu = SparseLu::with_options(&e, FillOrdering::Natural, Pivoting::Diagonal).unwrap();
        let g = lu.cholesky_factor().unwrap().to_dense();
        let expected = e.to_dense().cholesky().unwrap().l();
        assert!((g - expected).norm() < 1e-14);
    }

    #[test]
    fn cholesky_rejects_indefinite() {
        let e = SparseMatrix::from_dense(&DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]));
        let lu = SparseLu::with_options(&e, FillOrdering::Natural, Pivoting::Diagonal).unwrap();
        assert!(matches!(lu.cholesky_factor(), Err(LyapError::NotSpd)));
    }

    #[test]
    fn triangular_solves() {
        let e = laplacian2d(4).scale(-1.0);
        let lu = SparseLu::with_options(&e, FillOrdering::Natural, Pivoting::Diagonal).unwrap();
        let g = lu.cholesky_factor().unwrap();
        let x = DMatrix::from_fn(16, 2, |i, j| ((i * 7 + j * 3) % 5) as f64 - 2.0);
        assert!((g.mul(&g.solve(&x)) - &x).norm() < 1e-12);
        assert!((g.mul_transpose(&g.solve_transpose(&x)) - &x).norm() < 1e-12);
        let gd = g.to_dense();
        assert!((&gd * gd.transpose() - e.to_dense()).norm() < 1e-12);
    }
}
