//! Sparse and dense linear algebra kernels plus the operator abstraction.

pub mod dense;
pub mod lu;
pub mod mmio;
pub mod operator;
pub mod sparse;

pub use dense::{
    complex_schur, dense_eig, dense_eigenvalues, dense_lstsq_cx, dense_solve_cx, economy_qr, orth, to_complex,
    CMatrix, EconomyQr, EigPair, LstsqResult,
};
pub use lu::{FillOrdering, LowerTriangular, Pivoting, SparseLu};
pub use operator::{
    CongruenceFactor, CongruenceOperator, ShiftedSolver, ShiftedSparseSolver, SparseOperator, StableOperator,
};
pub use sparse::SparseMatrix;

use crate::error::Result;

/// Factors a square sparse matrix for repeated solves.
pub fn factorize(a: &SparseMatrix) -> Result<SparseLu> {
    SparseLu::new(a)
}
