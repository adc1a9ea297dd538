//! Block extended Krylov basis `EK_m(A, B) = span{B, A⁻¹B, AB, A⁻²B, …}`.
//!
//! The basis always carries the block that the next expansion will append,
//! so the Arnoldi relation `A V = V T + V_next T_tail` is available at the
//! current step without growing the space.

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::error::{LyapError, Result};
use crate::linops::{dense_eigenvalues, economy_qr, orth, StableOperator};

/// A new block whose relative size falls below this is treated as lying in
/// the current space.
const EXHAUSTED_TOL: f64 = 1e-10;
const BREAKDOWN_TOL: f64 = 1e-12;
const REORTH_TRIGGER: f64 = 1e-6;

/// State of the block that `expand` would append.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NextBlock {
    /// Full-rank block ready to append.
    Ready,
    /// The space is invariant under `A` and `A⁻¹`; `T_tail` is empty.
    Exhausted,
    /// The candidate block lost rank. Expansion breaks down unless the
    /// surviving directions complete the whole space.
    Deficient,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RitzValue {
    pub value: Complex64,
    pub stable: bool,
}

/// Orthonormal basis of the extended Krylov space with its projections.
pub struct ExtendedKrylovBasis<'a> {
    op: &'a dyn StableOperator,
    q: usize,
    m: usize,
    v: DMatrix<f64>,
    av: DMatrix<f64>,
    t: DMatrix<f64>,
    gamma: DMatrix<f64>,
    v_next: DMatrix<f64>,
    t_tail: DMatrix<f64>,
    next: NextBlock,
}

impl<'a> ExtendedKrylovBasis<'a> {
    /// Orthonormalizes `[B, A⁻¹B]`; `B = V₁ γ`.
    pub fn new(op: &'a dyn StableOperator, b: &DMatrix<f64>) -> Result<Self> {
        let (n, q) = b.shape();
        if n != op.dim() {
            return Err(LyapError::DimensionMismatch(format!("B has {n} rows, operator dimension {}", op.dim())));
        }
        if q == 0 || 2 * q > n {
            return Err(LyapError::InvalidArgument(format!("need 1 <= 2q <= n, got q = {q}, n = {n}")));
        }
        let bnorm = b.norm();
        if bnorm == 0.0 {
            return Err(LyapError::Breakdown { step: 1 });
        }
        let ainv_b = op.inv_apply(b);
        let scale = if ainv_b.norm() > 0.0 { bnorm / ainv_b.norm() } else { 1.0 };
        let mut x = DMatrix::zeros(n, 2 * q);
        x.columns_mut(0, q).copy_from(b);
        x.columns_mut(q, q).copy_from(&(ainv_b * scale));
        let qr = economy_qr(&x);
        if qr.rank_deficient {
            return Err(LyapError::Breakdown { step: 1 });
        }
        let gamma = qr.r.columns(0, q).into_owned();
        let v = qr.q;
        let av = op.apply(&v);
        let t = v.transpose() * &av;
        let mut basis = Self {
            op,
            q,
            m: 1,
            v,
            av,
            t,
            gamma,
            v_next: DMatrix::zeros(n, 0),
            t_tail: DMatrix::zeros(0, 2 * q),
            next: NextBlock::Exhausted,
        };
        basis.prepare_next();
        Ok(basis)
    }

    /// Builds the candidate block from the last block and orthogonalizes it.
    fn prepare_next(&mut self) {
        let (n, q, k) = (self.v.nrows(), self.q, self.v.ncols());
        let last = k - 2 * q;
        let mut c = DMatrix::zeros(n, 2 * q);
        c.columns_mut(0, q).copy_from(&self.av.columns(last, q));
        c.columns_mut(q, q).copy_from(&self.op.inv_apply(&self.v.columns(last + q, q).into_owned()));
        for mut col in c.column_iter_mut() {
            let nrm = col.norm();
            if nrm > 0.0 {
                col /= nrm;
            }
        }
        let c_norm = c.norm();
        let mut x = c;
        for _ in 0..2 {
            let h = self.v.transpose() * &x;
            x -= &self.v * h;
        }
        if x.norm() <= EXHAUSTED_TOL * c_norm {
            self.set_next(DMatrix::zeros(n, 0), NextBlock::Exhausted);
            return;
        }
        let mut qr = economy_qr(&x);
        if qr.min_relative_diag(c_norm) < REORTH_TRIGGER {
            let h = self.v.transpose() * &x;
            x -= &self.v * h;
            qr = economy_qr(&x);
        }
        if qr.min_relative_diag(c_norm) <= BREAKDOWN_TOL {
            // Keep the surviving directions so the Arnoldi relation still holds.
            let mut w = orth(&x);
            let h = self.v.transpose() * &w;
            w -= &self.v * h;
            let w = orth(&w);
            self.set_next(w, NextBlock::Deficient);
            return;
        }
        self.set_next(qr.q, NextBlock::Ready);
    }

    fn set_next(&mut self, v_next: DMatrix<f64>, status: NextBlock) {
        self.t_tail = v_next.transpose() * &self.av;
        self.v_next = v_next;
        self.next = status;
    }

    /// Appends the next block (`m → m + 1`).
    pub fn expand(&mut self) -> Result<()> {
        let (n, k, w) = (self.v.nrows(), self.v.ncols(), self.v_next.ncols());
        let completes = self.next == NextBlock::Deficient && k + w == n;
        if self.next != NextBlock::Ready && !completes {
            return Err(LyapError::Breakdown { step: self.m + 1 });
        }
        let a_new = self.op.apply(&self.v_next);
        let upper = self.v.transpose() * &a_new;
        let corner = self.v_next.transpose() * &a_new;

        let mut t = DMatrix::zeros(k + w, k + w);
        t.view_mut((0, 0), (k, k)).copy_from(&self.t);
        t.view_mut((0, k), (k, w)).copy_from(&upper);
        t.view_mut((k, 0), (w, k)).copy_from(&self.t_tail);
        t.view_mut((k, k), (w, w)).copy_from(&corner);

        let mut v = DMatrix::zeros(n, k + w);
        v.columns_mut(0, k).copy_from(&self.v);
        v.columns_mut(k, w).copy_from(&self.v_next);
        let mut av = DMatrix::zeros(n, k + w);
        av.columns_mut(0, k).copy_from(&self.av);
        av.columns_mut(k, w).copy_from(&a_new);

        self.t = t;
        self.v = v;
        self.av = av;
        self.m += 1;
        if completes {
            self.set_next(DMatrix::zeros(n, 0), NextBlock::Exhausted);
        } else {
            self.prepare_next();
        }
        Ok(())
    }

    pub fn operator(&self) -> &'a dyn StableOperator {
        self.op
    }

    /// Block width `q`.
    pub fn block_width(&self) -> usize {
        self.q
    }

    /// Number of blocks `m`.
    pub fn steps(&self) -> usize {
        self.m
    }

    /// Number of basis columns, `2qm` (less when the last block filled `ℝⁿ`).
    pub fn dim(&self) -> usize {
        self.v.ncols()
    }

    pub fn n(&self) -> usize {
        self.v.nrows()
    }

    pub fn v(&self) -> &DMatrix<f64> {
        &self.v
    }

    /// `Vᵀ A V`.
    pub fn t(&self) -> &DMatrix<f64> {
        &self.t
    }

    /// `V_nextᵀ A V`.
    pub fn t_tail(&self) -> &DMatrix<f64> {
        &self.t_tail
    }

    pub fn v_next(&self) -> &DMatrix<f64> {
        &self.v_next
    }

    pub fn gamma(&self) -> &DMatrix<f64> {
        &self.gamma
    }

    pub fn next_block(&self) -> NextBlock {
        self.next
    }

    pub fn can_expand(&self) -> bool {
        self.next == NextBlock::Ready || (self.next == NextBlock::Deficient && self.dim() + self.v_next.ncols() == self.n())
    }

    /// `A V`, cached from the expansions.
    pub fn av(&self) -> &DMatrix<f64> {
        &self.av
    }

    /// `E₁ γ` padded with zeros to `rows` rows.
    pub fn e1_gamma(&self, rows: usize) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(rows, self.q);
        out.rows_mut(0, 2 * self.q).copy_from(&self.gamma);
        out
    }

    /// Eigenvalues of `T`, tagged stable when `Re < 0`.
    pub fn ritz_values(&self) -> Result<Vec<RitzValue>> {
        Ok(dense_eigenvalues(&self.t)?
            .into_iter()
            .map(|value| RitzValue { value, stable: value.re < 0.0 })
            .collect())
    }

    /// `‖A V − V T − V_next T_tail‖_F`.
    pub fn arnoldi_residual(&self) -> f64 {
        (&self.av - &self.v * &self.t - &self.v_next * &self.t_tail).norm()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linops::{SparseMatrix, SparseOperator};

    fn diag_op(d: &[f64]) -> SparseOperator {
        SparseOperator::new(SparseMatrix::from_diagonal(d)).unwrap()
    }

    fn laplacian(h: usize) -> SparseOperator {
        let d = SparseMatrix::tridiag(h, 1.0, -2.0, 1.0);
        let i = SparseMatrix::identity(h);
        SparseOperator::new(i.kron(&d).add(1.0, &d.kron(&i), 1.0).unwrap()).unwrap()
    }

    fn orth_err(v: &DMatrix<f64>) -> f64 {
        (v.transpose() * v - DMatrix::identity(v.ncols(), v.ncols())).norm()
    }

    #[test]
    fn init_spans_two_dimensional_space() {
        let op = diag_op(&[-1.0, -2.0]);
        let b = DMatrix::from_element(2, 1, 1.0 / 2f64.sqrt());
        let basis = ExtendedKrylovBasis::new(&op, &b).unwrap();
        assert_eq!(basis.dim(), 2);
        assert!(orth_err(basis.v()) <= 1e-12);
        assert!((basis.v() * basis.e1_gamma(2) - &b).norm() <= 1e-12);
        assert_eq!(basis.next_block(), NextBlock::Exhausted);
    }

    #[test]
    fn init_rank_deficient_breaks_down() {
        let op = diag_op(&[-1.0; 5]);
        let mut b = DMatrix::zeros(5, 1);
        b[0] = 1.0;
        assert!(matches!(ExtendedKrylovBasis::new(&op, &b), Err(LyapError::Breakdown { step: 1 })));
    }

    #[test]
    fn full_space_similarity() {
        let op = diag_op(&[-1.0, -2.0, -3.0, -4.0]);
        let b = DMatrix::from_element(4, 1, 0.5);
        let mut basis = ExtendedKrylovBasis::new(&op, &b).unwrap();
        basis.expand().unwrap();
        assert_eq!(basis.dim(), 4);
        let mut ev: Vec<f64> = basis.ritz_values().unwrap().iter().map(|r| r.value.re).collect();
        ev.sort_by(f64::total_cmp);
        for (got, want) in ev.iter().zip([-4.0, -3.0, -2.0, -1.0]) {
            assert!((got - want).abs() <= 1e-10);
        }
        assert!(matches!(basis.expand(), Err(LyapError::Breakdown { .. })));
    }

    #[test]
    fn deficient_block_completing_the_space() {
        let op = diag_op(&[-1.0, -2.0, -3.0, -4.0, -5.0, -6.0]);
        let b = DMatrix::from_fn(6, 2, |i, j| if j == 0 { 1.0 } else { (i * i) as f64 });
        let mut basis = ExtendedKrylovBasis::new(&op, &b).unwrap();
        assert_eq!(basis.next_block(), NextBlock::Deficient);
        assert!(basis.can_expand());
        basis.expand().unwrap();
        assert_eq!(basis.dim(), 6);
        assert_eq!(basis.next_block(), NextBlock::Exhausted);
        assert!(basis.arnoldi_residual() <= 1e-12);
        assert!(matches!(basis.expand(), Err(LyapError::Breakdown { step: 3 })));
    }

    #[test]
    fn laplacian_orthogonality_and_relation() {
        let op = laplacian(20);
        let a_norm = op.matrix().frobenius_norm();
        let b = DMatrix::from_fn(400, 1, |i, _| ((i * 37 % 11) as f64 - 5.0) / 50.0);
        let mut basis = ExtendedKrylovBasis::new(&op, &b).unwrap();
        for _ in 0..10 {
            basis.expand().unwrap();
            assert!(orth_err(basis.v()) <= 1e-10);
            assert!(basis.arnoldi_residual() <= 1e-8 * a_norm);
            let direct = basis.v().transpose() * op.matrix().apply(basis.v());
            assert!((&direct - basis.t()).norm() <= 1e-10 * a_norm);
        }
        assert_eq!(basis.dim(), 22);
        // Shifted relation at p = −1.
        let shifted = op.matrix().add(1.0, &SparseMatrix::identity(400), -1.0).unwrap();
        let k = basis.dim();
        let t_shift = basis.t() - DMatrix::identity(k, k);
        let res = shifted.apply(basis.v()) - basis.v() * t_shift - basis.v_next() * basis.t_tail();
        assert!(res.norm() <= 1e-8 * shifted.frobenius_norm());
    }

    #[test]
    fn ritz_values_symmetric_and_bounded() {
        let op = laplacian(20);
        let b = DMatrix::from_element(400, 1, 0.05);
        let mut basis = ExtendedKrylovBasis::new(&op, &b).unwrap();
        for _ in 0..4 {
            basis.expand().unwrap();
        }
        assert_eq!(basis.steps(), 5);
        let spectrum = crate::linops::dense_eigenvalues(&op.to_dense()).unwrap();
        let lo = spectrum.iter().map(|z| z.re).fold(f64::INFINITY, f64::min);
        let hi = spectrum.iter().map(|z| z.re).fold(f64::NEG_INFINITY, f64::max);
        for r in basis.ritz_values().unwrap() {
            assert!(r.value.im.abs() <= 1e-10);
            assert!(r.stable);
            assert!(r.value.re >= lo - 1e-10 && r.value.re <= hi + 1e-10);
        }
    }

    #[test]
    fn nesting_is_bit_exact() {
        let op = laplacian(8);
        let b = DMatrix::from_fn(64, 2, |i, j| ((i + 3 * j) % 7) as f64 - 3.0);
        let mut basis = ExtendedKrylovBasis::new(&op, &b).unwrap();
        basis.expand().unwrap();
        let before = basis.v().clone();
        let t_before = basis.t().clone();
        basis.expand().unwrap();
        assert_eq!(basis.v().columns(0, before.ncols()), before.columns(0, before.ncols()));
        assert_eq!(basis.t().view((0, 0), t_before.shape()), t_before.view((0, 0), t_before.shape()));
    }
}
