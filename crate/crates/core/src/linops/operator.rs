//! Operators consumed by the solvers.

use nalgebra::DMatrix;
use num_complex::Complex64;

use super::lu::{FillOrdering, LowerTriangular, Pivoting, SparseLu};
use super::sparse::SparseMatrix;
use crate::error::{LyapError, Result};

/// Factored `(A + pI)` for one shift.
pub trait ShiftedSolver: Send + Sync {
    fn shift(&self) -> Complex64;

    /// Solves `(A + pI) S = rhs` for a real right-hand side.
    fn solve(&self, rhs: &DMatrix<f64>) -> DMatrix<Complex64>;
}

/// A stable matrix seen only through products and solves.
pub trait StableOperator: Send + Sync {
    fn dim(&self) -> usize;

    /// `A X`.
    fn apply(&self, x: &DMatrix<f64>) -> DMatrix<f64>;

    /// `A⁻¹ X`.
    fn inv_apply(&self, x: &DMatrix<f64>) -> DMatrix<f64>;

    /// Whether `A` is known to be symmetric.
    fn is_symmetric(&self) -> Option<bool> {
        None
    }

    /// Factors `A + pI` for repeated solves.
    fn shifted_solver(&self, p: Complex64) -> Result<Box<dyn ShiftedSolver>>;

    /// Dense copy of `A` (small problems only).
    fn to_dense(&self) -> DMatrix<f64> {
        self.apply(&DMatrix::identity(self.dim(), self.dim()))
    }
}

/// Explicit sparse `A` with a cached LU factorization.
#[derive(Debug, Clone)]
pub struct SparseOperator {
    a: SparseMatrix,
    lu: SparseLu,
    symmetric: bool,
}

impl SparseOperator {
    pub fn new(a: SparseMatrix) -> Result<Self> {
        let lu = SparseLu::new(&a)?;
        let symmetric = a.is_symmetric(0.0);
        Ok(Self { a, lu, symmetric })
    }

    pub fn matrix(&self) -> &SparseMatrix {
        &self.a
    }
}

impl StableOperator for SparseOperator {
    fn dim(&self) -> usize {
        self.a.nrows()
    }

    fn apply(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        self.a.apply(x)
    }

    fn inv_apply(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        self.lu.solve(x)
    }

    fn is_symmetric(&self) -> Option<bool> {
        Some(self.symmetric)
    }

    fn shifted_solver(&self, p: Complex64) -> Result<Box<dyn ShiftedSolver>> {
        Ok(Box::new(ShiftedSparseSolver::new(&self.a, None, p)?))
    }

    fn to_dense(&self) -> DMatrix<f64> {
        self.a.to_dense()
    }
}

/// LU of `A + pM`, or of the real augmented system when `p` is complex:
/// `[[A+θM, −ξM], [ξM, A+θM]] [Re S; Im S] = [W; 0]`.
#[derive(Debug, Clone)]
pub struct ShiftedSparseSolver {
    p: Complex64,
    n: usize,
    lu: SparseLu,
}

impl ShiftedSparseSolver {
    /// `mass = None` means the identity.
    pub fn new(a: &SparseMatrix, mass: Option<&SparseMatrix>, p: Complex64) -> Result<Self> {
        let n = a.nrows();
        let identity;
        let m = match mass {
            Some(m) => m,
            None => {
                identity = SparseMatrix::identity(n);
                &identity
            }
        };
        let shifted = a.add(1.0, m, p.re)?;
        let system = if p.im == 0.0 {
            shifted
        } else {
            let mut trip = Vec::with_capacity(2 * shifted.nnz() + 2 * m.nnz());
            for (r, c, v) in shifted.triplets() {
                trip.push((r, c, v));
                trip.push((r + n, c + n, v));
            }
            for (r, c, v) in m.triplets() {
                trip.push((r, c + n, -p.im * v));
                trip.push((r + n, c, p.im * v));
            }
            SparseMatrix::from_triplets(2 * n, 2 * n, &trip)?
        };
        let lu = SparseLu::new(&system)?;
        Ok(Self { p, n, lu })
    }
}

impl ShiftedSolver for ShiftedSparseSolver {
    fn shift(&self) -> Complex64 {
        self.p
    }

    fn solve(&self, rhs: &DMatrix<f64>) -> DMatrix<Complex64> {
        let n = self.n;
        if self.p.im == 0.0 {
            return self.lu.solve(rhs).map(|v| Complex64::new(v, 0.0));
        }
        let mut aug = DMatrix::zeros(2 * n, rhs.ncols());
        aug.rows_mut(0, n).copy_from(rhs);
        let x = self.lu.solve(&aug);
        DMatrix::from_fn(n, rhs.ncols(), |r, c| Complex64::new(x[(r, c)], x[(r + n, c)]))
    }
}

/// Congruence factor `G` with `E = G Gᵀ`.
#[derive(Debug, Clone)]
pub enum CongruenceFactor {
    /// `G = diag(√e)`.
    Diagonal(Vec<f64>),
    Cholesky(LowerTriangular),
}

impl CongruenceFactor {
    /// `G X`.
    pub fn mul(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        match self {
            CongruenceFactor::Diagonal(g) => DMatrix::from_fn(x.nrows(), x.ncols(), |r, c| g[r] * x[(r, c)]),
            CongruenceFactor::Cholesky(l) => l.mul(x),
        }
    }

    /// `Gᵀ X`.
    pub fn mul_transpose(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        match self {
            CongruenceFactor::Diagonal(_) => self.mul(x),
            CongruenceFactor::Cholesky(l) => l.mul_transpose(x),
        }
    }

    /// `G⁻¹ X`.
    pub fn solve(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        match self {
            CongruenceFactor::Diagonal(g) => DMatrix::from_fn(x.nrows(), x.ncols(), |r, c| x[(r, c)] / g[r]),
            CongruenceFactor::Cholesky(l) => l.solve(x),
        }
    }

    /// `G⁻ᵀ X`.
    pub fn solve_transpose(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        match self {
            CongruenceFactor::Diagonal(_) => self.solve(x),
            CongruenceFactor::Cholesky(l) => l.solve_transpose(x),
        }
    }
}

/// `Ã = G⁻¹ A G⁻ᵀ` applied implicitly, for `E = G Gᵀ` SPD.
#[derive(Debug, Clone)]
pub struct CongruenceOperator {
    a: SparseMatrix,
    e: SparseMatrix,
    g: CongruenceFactor,
    lu: SparseLu,
}

impl CongruenceOperator {
    /// Diagonal `E`; every entry must be positive.
    pub fn with_diagonal(a: SparseMatrix, e_diag: &[f64]) -> Result<Self> {
        if e_diag.len() != a.nrows() || !a.is_square() {
            return Err(LyapError::DimensionMismatch(format!(
                "A is {}x{}, E has {} diagonal entries",
                a.nrows(),
                a.ncols(),
                e_diag.len()
            )));
        }
        if e_diag.iter().any(|&d| !(d > 0.0)) {
            return Err(LyapError::NotSpd);
        }
        let g = CongruenceFactor::Diagonal(e_diag.iter().map(|d| d.sqrt()).collect());
        let e = SparseMatrix::from_diagonal(e_diag);
        let lu = SparseLu::new(&a)?;
        Ok(Self { a, e, g, lu })
    }

    /// Sparse SPD `E` through its Cholesky factor.
    pub fn with_cholesky(a: SparseMatrix, e: SparseMatrix) -> Result<Self> {
        if e.nrows() != a.nrows() || !e.is_square() || !a.is_square() {
            return Err(LyapError::DimensionMismatch(format!(
                "A is {}x{}, E is {}x{}",
                a.nrows(),
                a.ncols(),
                e.nrows(),
                e.ncols()
            )));
        }
        if !e.is_symmetric(1e-14 * e.max_abs()) {
            return Err(LyapError::NotSpd);
        }
        let chol = SparseLu::with_options(&e, FillOrdering::Natural, Pivoting::Diagonal)
            .map_err(|err| match err {
                LyapError::SingularMatrix { .. } => LyapError::NotSpd,
                other => other,
            })?
            .cholesky_factor()?;
        let lu = SparseLu::new(&a)?;
        Ok(Self { a, e, g: CongruenceFactor::Cholesky(chol), lu })
    }

    pub fn factor(&self) -> &CongruenceFactor {
        &self.g
    }

    /// `B̃ = G⁻¹ B`.
    pub fn transform_rhs(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        self.g.solve(b)
    }

    /// `Z = G⁻ᵀ Z̃`.
    pub fn back_map(&self, z: &DMatrix<f64>) -> DMatrix<f64> {
        self.g.solve_transpose(z)
    }
}

impl StableOperator for CongruenceOperator {
    fn dim(&self) -> usize {
        self.a.nrows()
    }

    fn apply(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        self.g.solve(&self.a.apply(&self.g.solve_transpose(x)))
    }

    fn inv_apply(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        self.g.mul_transpose(&self.lu.solve(&self.g.mul(x)))
    }

    fn is_symmetric(&self) -> Option<bool> {
        Some(self.a.is_symmetric(0.0))
    }

    fn shifted_solver(&self, p: Complex64) -> Result<Box<dyn ShiftedSolver>> {
        let inner = ShiftedSparseSolver::new(&self.a, Some(&self.e), p)?;
        Ok(Box::new(CongruenceShifted { inner, g: self.g.clone() }))
    }
}

/// `(Ã + pI)⁻¹ = Gᵀ (A + pE)⁻¹ G`.
struct CongruenceShifted {
    inner: ShiftedSparseSolver,
    g: CongruenceFactor,
}

impl ShiftedSolver for CongruenceShifted {
    fn shift(&self) -> Complex64 {
        self.inner.shift()
    }

    fn solve(&self, rhs: &DMatrix<f64>) -> DMatrix<Complex64> {
        let s = self.inner.solve(&self.g.mul(rhs));
        let re = self.g.mul_transpose(&s.map(|z| z.re));
        let im = self.g.mul_transpose(&s.map(|z| z.im));
        DMatrix::from_fn(re.nrows(), re.ncols(), |r, c| Complex64::new(re[(r, c)], im[(r, c)]))
    }
}
