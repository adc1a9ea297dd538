//! Families of shifted systems `(A + p_j I) S_j = W` solved on one shared
//! extended Krylov basis.
//!
//! Right-hand side coefficients shorter than the basis are zero-padded.

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::error::{LyapError, Result};
use crate::linops::{dense_lstsq_cx, dense_solve_cx, to_complex, CMatrix, StableOperator};
use crate::xkrylov::{ExtendedKrylovBasis, NextBlock};

/// Projection used for the inner solves.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Projection {
    #[default]
    Galerkin,
    MinRes,
}

/// Coefficients `Y` with `S ≈ V Y`, and the residual norm of that approximation.
#[derive(Debug, Clone)]
pub struct ProjectedSolve {
    pub y: CMatrix,
    pub resnorm: f64,
}

fn padded_rhs(rhs: &DMatrix<f64>, rows: usize) -> Result<CMatrix> {
    if rhs.nrows() > rows {
        return Err(LyapError::DimensionMismatch(format!(
            "rhs coefficients have {} rows, basis has {rows}",
            rhs.nrows()
        )));
    }
    let mut out = CMatrix::zeros(rows, rhs.ncols());
    out.rows_mut(0, rhs.nrows()).copy_from(&to_complex(rhs));
    Ok(out)
}

fn check_shift(p: Complex64) -> Result<()> {
    if p.re < 0.0 && p.is_finite() {
        Ok(())
    } else {
        Err(LyapError::UnstableShift { re: p.re, im: p.im })
    }
}

fn shifted_t(basis: &ExtendedKrylovBasis<'_>, p: Complex64) -> CMatrix {
    let k = basis.dim();
    to_complex(basis.t()) + CMatrix::identity(k, k) * p
}

/// Galerkin coefficients: `(T + pI) Y = [rhs; 0]`, residual `‖T_tail Y‖_F`.
pub fn galerkin_coeffs(basis: &ExtendedKrylovBasis<'_>, p: Complex64, rhs: &DMatrix<f64>) -> Result<ProjectedSolve> {
    check_shift(p)?;
    let r = padded_rhs(rhs, basis.dim())?;
    let y = dense_solve_cx(&shifted_t(basis, p), &r)?;
    let resnorm = (to_complex(basis.t_tail()) * &y).norm();
    Ok(ProjectedSolve { y, resnorm })
}

/// Minimal-residual coefficients over `[T + pI; T_tail]`.
pub fn mr_coeffs(basis: &ExtendedKrylovBasis<'_>, p: Complex64, rhs: &DMatrix<f64>) -> Result<ProjectedSolve> {
    check_shift(p)?;
    let k = basis.dim();
    let tail = basis.t_tail().nrows();
    let mut m = CMatrix::zeros(k + tail, k);
    m.rows_mut(0, k).copy_from(&shifted_t(basis, p));
    m.rows_mut(k, tail).copy_from(&to_complex(basis.t_tail()));
    let mut r = CMatrix::zeros(k + tail, rhs.ncols());
    r.rows_mut(0, k).copy_from(&padded_rhs(rhs, k)?);
    let ls = dense_lstsq_cx(&m, &r)?;
    Ok(ProjectedSolve { y: ls.y, resnorm: ls.resnorm })
}

pub fn projected_solve(
    kind: Projection,
    basis: &ExtendedKrylovBasis<'_>,
    p: Complex64,
    rhs: &DMatrix<f64>,
) -> Result<ProjectedSolve> {
    match kind {
        Projection::Galerkin => galerkin_coeffs(basis, p, rhs),
        Projection::MinRes => mr_coeffs(basis, p, rhs),
    }
}

/// `‖(A + pI) V Y − V [rhs; 0]‖_F` formed with full-length vectors.
pub fn explicit_residual(basis: &ExtendedKrylovBasis<'_>, p: Complex64, rhs: &DMatrix<f64>, y: &CMatrix) -> f64 {
    let v = to_complex(basis.v());
    let s = &v * y;
    let re = basis.operator().apply(&s.map(|z| z.re));
    let im = basis.operator().apply(&s.map(|z| z.im));
    let a_s = CMatrix::from_fn(re.nrows(), re.ncols(), |r, c| Complex64::new(re[(r, c)], im[(r, c)]));
    let w = v * padded_rhs(rhs, basis.dim()).expect("rhs fits the basis");
    (a_s + s * p - w).norm()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FamilyStatus {
    Converged,
    MaxSpaceReached,
}

/// Outcome of a shifted family solve.
#[derive(Debug, Clone)]
pub struct FamilySolution {
    /// `S_j = V Y_j`, in the order of the input shifts.
    pub solutions: Vec<CMatrix>,
    pub resnorms: Vec<f64>,
    pub converged: Vec<bool>,
    /// Basis step at which each system entered the converged set.
    pub converged_at: Vec<Option<usize>>,
    pub status: FamilyStatus,
    pub steps: usize,
    pub space_dim: usize,
}

/// Solves every `(A + p_j I) S_j = W` to `‖R_j‖_F / ‖W‖_F < eps`, growing
/// the basis until all systems converge or `m_max` steps are used.
pub fn solve_family(
    op: &dyn StableOperator,
    w: &DMatrix<f64>,
    shifts: &[Complex64],
    eps: f64,
    m_max: usize,
    kind: Projection,
) -> Result<FamilySolution> {
    for &p in shifts {
        check_shift(p)?;
    }
    let mut basis = ExtendedKrylovBasis::new(op, w)?;
    let beta = w.norm();
    let n_sh = shifts.len();
    let mut ys: Vec<Option<CMatrix>> = vec![None; n_sh];
    let mut resnorms = vec![f64::INFINITY; n_sh];
    let mut converged_at: Vec<Option<usize>> = vec![None; n_sh];
    let rhs = basis.gamma().clone();
    let status = loop {
        for j in 0..n_sh {
            if converged_at[j].is_some() {
                continue;
            }
            let sol = projected_solve(kind, &basis, shifts[j], &rhs)?;
            resnorms[j] = sol.resnorm;
            if sol.resnorm < eps * beta {
                converged_at[j] = Some(basis.steps());
            }
            ys[j] = Some(sol.y);
        }
        if converged_at.iter().all(Option::is_some) {
            break FamilyStatus::Converged;
        }
        if basis.steps() >= m_max || basis.next_block() == NextBlock::Exhausted {
            break FamilyStatus::MaxSpaceReached;
        }
        basis.expand()?;
    };
    let v = to_complex(basis.v());
    let solutions = ys
        .into_iter()
        .map(|y| {
            let y = y.expect("every shift solved at least once");
            v.columns(0, y.nrows()) * y
        })
        .collect();
    Ok(FamilySolution {
        solutions,
        resnorms,
        converged: converged_at.iter().map(Option::is_some).collect(),
        converged_at,
        status,
        steps: basis.steps(),
        space_dim: basis.dim(),
    })
}
